"""Deterministic least-squares primitives.

Everything in this module is a pure function of numpy arrays: OLS via a QR
decomposition, projection residuals (partialling out), feasible GLS with a
fitted variance model, instrument-strength F statistics, and the linear
variance model used by the robust estimators. All returned containers are
frozen and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateVarianceError,
    NonPositiveVarianceError,
    RankDeficientError,
    TooFewRowsError,
)

RANK_RTOL = 1e-10
F_CAP = 1e15


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit: coefficients plus residual decomposition.

    ``sse`` is the residual sum of squares, ``ssr`` the explained sum of
    squares around the fitted mean, ``dof`` the residual degrees of freedom.
    ``residuals + fitted`` reproduces the outcome elementwise.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    sse: float
    ssr: float
    dof: int

    def __post_init__(self):
        for name in ("coefficients", "residuals", "fitted"):
            arr = getattr(self, name)
            arr.flags.writeable = False


@dataclass(frozen=True)
class VarianceModel:
    """Linear conditional-variance fit with a positivity floor.

    fitted_variances are the linear predictions clamped below at ``floor``
    so they can be used as FGLS weights.
    """

    intercept_b: float
    slope_coeffs: np.ndarray
    fitted_variances: np.ndarray
    floor: float

    def __post_init__(self):
        self.slope_coeffs.flags.writeable = False
        self.fitted_variances.flags.writeable = False
        if self.floor <= 0:
            raise NonPositiveVarianceError("variance floor must be positive")
        if (self.fitted_variances < self.floor - 1e-300).any():
            raise NonPositiveVarianceError("fitted variance below floor")


def _design(columns, n: int, intercept: bool) -> np.ndarray:
    cols = []
    if intercept:
        cols.append(np.ones(n))
    if columns is not None:
        arr = np.asarray(columns, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] != n:
            raise ValueError("design and outcome lengths differ")
        cols.append(arr)
    return np.column_stack(cols) if cols else np.empty((n, 0))


def _qr_solve(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve min ||Xb - y|| by reduced QR; raise on rank deficiency."""
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.size and diag.min() < RANK_RTOL * max(diag.max(), 1e-300):
        raise RankDeficientError(
            f"design numerically rank deficient (QR diagonal ratio "
            f"{diag.min():.3e}/{diag.max():.3e})")
    from scipy.linalg import solve_triangular

    return solve_triangular(r, q.T @ y, lower=False)


def ols(design, outcome, *, intercept: bool = True) -> RegressionFit:
    """Ordinary least squares of ``outcome`` on ``design``.

    ``design`` may be None (intercept-only), a vector, or an (n, p) matrix;
    an intercept column is prepended unless ``intercept=False``.
    """
    y = np.asarray(outcome, dtype=np.float64)
    n = y.shape[0]
    X = _design(design, n, intercept)
    p = X.shape[1]
    if p == 0:
        raise ValueError("empty design")
    if n <= p:
        raise TooFewRowsError(f"n={n} rows for p={p} parameters")
    beta = _qr_solve(X, y)
    fitted = X @ beta
    resid = y - fitted
    sse = float(resid @ resid)
    ssr = float(((fitted - fitted.mean()) ** 2).sum())
    return RegressionFit(beta, resid, fitted, sse, ssr, n - p)


def partial_out(target, controls=None) -> np.ndarray:
    """Residual of ``target`` after projecting on controls plus an intercept.

    With ``controls=None`` this is demeaning. Equivalent to (I - P_V) target
    for V = [1, controls].
    """
    y = np.asarray(target, dtype=np.float64)
    return ols(controls, y).residuals.copy()


def fgls(design, outcome, weights: VarianceModel, *,
         intercept: bool = True) -> RegressionFit:
    """Feasible GLS: OLS on rows rescaled by 1/sqrt(fitted variance).

    The returned fit is expressed on the original scale: ``fitted`` uses the
    weighted coefficients with the raw design, and ``residuals + fitted``
    equals ``outcome`` elementwise. With all variances equal the result
    matches plain OLS.
    """
    y = np.asarray(outcome, dtype=np.float64)
    n = y.shape[0]
    sigma2 = weights.fitted_variances
    if sigma2.shape[0] != n:
        raise ValueError("variance model length does not match data")
    if (sigma2 <= 0).any():
        raise NonPositiveVarianceError("non-positive FGLS weight")
    w = 1.0 / np.sqrt(sigma2)
    X = _design(design, n, intercept)
    p = X.shape[1]
    if n <= p:
        raise TooFewRowsError(f"n={n} rows for p={p} parameters")
    beta = _qr_solve(X * w[:, None], y * w)
    fitted = X @ beta
    resid = y - fitted
    sse = float(resid @ resid)
    ssr = float(((fitted - fitted.mean()) ** 2).sum())
    return RegressionFit(beta, resid, fitted, sse, ssr, n - p)


def first_stage_F(fit: RegressionFit, n_instruments: int = 1) -> float:
    """F statistic for joint significance of the instrument block.

    ``fit`` must be the first-stage regression of the (partialled) endogenous
    regressor on an intercept plus the instrument(s); the restricted model is
    then intercept-only, so the numerator is the explained sum of squares.
    A perfect fit is reported as F_CAP rather than infinity.
    """
    if fit.dof < 1:
        raise TooFewRowsError("first-stage fit has no residual dof")
    total = fit.sse + fit.ssr
    if total <= 0.0:
        raise DegenerateVarianceError("first-stage outcome has zero variance")
    if fit.sse <= total * 1e-14:
        return F_CAP
    f = (fit.ssr / n_instruments) / (fit.sse / fit.dof)
    return float(min(f, F_CAP))


def estimate_variance_model(squared_residuals, regressors) -> VarianceModel:
    """Fit the linear conditional-variance model and clamp its predictions.

    Regresses squared residuals on an intercept plus the given regressor(s);
    the floor is max(1e-8, 1e-6 * mean(squared residuals)).
    """
    e2 = np.asarray(squared_residuals, dtype=np.float64)
    fit = ols(regressors, e2)
    floor = max(1e-8, 1e-6 * float(e2.mean()))
    fitted = np.maximum(fit.fitted, floor)
    return VarianceModel(
        intercept_b=float(fit.coefficients[0]),
        slope_coeffs=fit.coefficients[1:].copy(),
        fitted_variances=fitted,
        floor=floor,
    )
