"""Heteroscedasticity-robust identification of delta0.

Two implementations of the robust criterion: a parametric locus built from
chi-square(1) probabilities of Breusch-Pagan-type statistics for the OLS and
FGLS first stages, and a nonparametric locus built from the two-sample
Anderson-Darling distance between squared OLS and FGLS residuals. Both are
minimized over the delta grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .exceptions import DegenerateVarianceError
from .linalg import estimate_variance_model, fgls, ols
from .search import (
    ARGMIN_TIE_RTOL,
    DeltaLocus,
    DeltaZero,
    GridConfig,
    SivContext,
    _golden,
    _strength,
    candidate,
    grid_deltas,
)

RobustMode = Literal["parametric", "nonparametric"]

# chi2(1) 99.9% point: beyond it 1 - cdf < 1e-3 and the probability scale
# carries no usable resolution for the distance comparison.
CHI2_SATURATION = 10.827566170662733


def chi2_cdf(x: float, df: int = 1) -> float:
    """Chi-square CDF via the regularized lower incomplete gamma function.

    Series expansion for x < a + 1, continued fraction otherwise (absolute
    error below 1e-12; no table lookup).
    """
    if df < 1:
        raise ValueError("df must be a positive integer")
    if x <= 0.0:
        return 0.0
    return _gammainc_lower(0.5 * df, 0.5 * x)


def _gammainc_lower(a: float, x: float, eps: float = 1e-15,
                    max_iter: int = 500) -> float:
    if x < a + 1.0:
        # series representation
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(max_iter):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * eps:
                break
        return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    # continued fraction for the upper tail
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    upper = math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    return 1.0 - upper


@dataclass(frozen=True)
class RobustPoint:
    """One evaluated point of a robust locus.

    For the nonparametric mode the x2 fields carry the two sample sizes of
    the AD comparison instead of chi-square statistics.
    """

    delta: float
    x2_ols: float
    x2_fgls: float
    distance: float


@dataclass(frozen=True)
class AdInput:
    """The two squared-residual samples entering the AD statistic."""

    sample_f: np.ndarray
    sample_g: np.ndarray

    def __post_init__(self):
        for name in ("sample_f", "sample_g"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size == 0:
                raise DegenerateVarianceError(f"{name} is empty")
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise ValueError(f"{name} must be finite and nonnegative")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def chi_square_stat(squared_residuals, regressor) -> float:
    """Heteroscedasticity statistic (SSR/2) / (SSE/n)^2.

    SSR is the explained sum of squares from regressing the squared residuals
    on [1, regressor]; SSE is the first-stage residual sum of squares, i.e.
    the sum of the squared residuals themselves, so SSE/n is the usual
    variance estimate. Returns 0 when the residuals are identically zero.
    """
    e2 = np.asarray(squared_residuals, dtype=np.float64)
    z = np.asarray(regressor, dtype=np.float64)
    if e2.shape[0] < 3:
        raise DegenerateVarianceError("need at least 3 observations")
    if float(z.var()) <= 0.0:
        raise DegenerateVarianceError("regressor has zero variance")
    n = e2.shape[0]
    sse = float(e2.sum())
    if sse <= 0.0:
        return 0.0
    fit = ols(z, e2)
    sigma2 = sse / n
    stat = (fit.ssr / 2.0) / (sigma2 * sigma2)
    # constant e2 leaves only rounding noise in the explained sum
    return float(stat) if stat > 1e-18 else 0.0


def _first_stage_pair(context: SivContext, s: np.ndarray):
    """OLS and FGLS first stages of x on s plus the fitted variance model."""
    fit_ols = ols(s, context.x)
    e2 = fit_ols.residuals ** 2
    vm = estimate_variance_model(e2, s)
    fit_g = fgls(s, context.x, vm)
    return fit_ols, fit_g, vm


def parametric_distance(context: SivContext, k: int, delta: float,
                        ratio: bool = False) -> RobustPoint:
    """Difference of chi-square(1) probabilities between OLS and FGLS.

    X2 tests the squared OLS residuals against s; X2_g tests the
    GLS-transformed system (residuals and instrument both rescaled by the
    fitted variance), so the two coincide exactly when the fitted variance
    model is flat. The signed distance is P[chi2(1) < X2] - P[chi2(1) < X2_g]
    (their ratio with ``ratio=True``); the search minimizes its magnitude.
    """
    s = candidate(context, k, delta)
    fit_ols, fit_g, vm = _first_stage_pair(context, s)
    sd = np.sqrt(vm.fitted_variances)
    x2 = chi_square_stat(fit_ols.residuals ** 2, s)
    x2_g = chi_square_stat((fit_g.residuals / sd) ** 2, s / sd)
    p, p_g = chi2_cdf(x2), chi2_cdf(x2_g)
    if ratio:
        dist = p / p_g if p_g > 0 else math.inf
    else:
        dist = p - p_g
    return RobustPoint(delta=float(delta), x2_ols=x2, x2_fgls=x2_g,
                       distance=float(dist))


def ad_two_sample(ad_input: AdInput) -> float:
    """Two-sample Anderson-Darling statistic on pooled right-continuous CDFs.

    Summed over the pooled sorted sample (ties contribute once per
    occurrence, all copies sharing the CDF value at their common point);
    pooled points where the combined CDF reaches 1 are excluded since their
    denominator vanishes.
    """
    f, g = ad_input.sample_f, ad_input.sample_g
    n, m = f.shape[0], g.shape[0]
    if n < 2 or m < 2:
        raise DegenerateVarianceError("AD needs at least 2 points per sample")
    pooled = np.concatenate([f, g])
    values, counts = np.unique(pooled, return_counts=True)
    f_cdf = np.searchsorted(np.sort(f), values, side="right") / n
    g_cdf = np.searchsorted(np.sort(g), values, side="right") / m
    h_cdf = np.cumsum(counts) / (n + m)
    keep = h_cdf < 1.0
    den = h_cdf * (1.0 - h_cdf)
    terms = np.zeros_like(den)
    np.divide((f_cdf - g_cdf) ** 2, den, out=terms, where=keep)
    return float(n * m / (n + m) ** 2 * (terms * counts)[keep].sum())


def ad_distance(context: SivContext, k: int, delta: float) -> float:
    """AD statistic between squared OLS and squared FGLS residuals."""
    s = candidate(context, k, delta)
    fit_ols, fit_g, _ = _first_stage_pair(context, s)
    return ad_two_sample(AdInput(fit_ols.residuals ** 2, fit_g.residuals ** 2))


def trace_discrepancy(context: SivContext, k: int, delta: float) -> float:
    """Diagonal trace form sum((sigma_i^2 - 1)^2) of the fitted variances
    (diagnostic only)."""
    s = candidate(context, k, delta)
    _, _, vm = _first_stage_pair(context, s)
    return float(((vm.fitted_variances - 1.0) ** 2).sum())


def robust_criterion(context: SivContext, k: int, mode: RobustMode):
    """Locus criterion callable for scan_locus / golden refinement."""
    if mode == "parametric":
        return lambda d: abs(parametric_distance(context, k, d).distance)
    if mode == "nonparametric":
        return lambda d: ad_distance(context, k, d)
    raise ValueError(f"unknown robust mode: {mode}")


def robust_delta0(context: SivContext, k: int, grid: GridConfig | None = None,
                  mode: RobustMode = "parametric",
                  ) -> Optional[tuple[DeltaZero, DeltaLocus]]:
    """Minimize the robust locus over the delta grid.

    The locus records |distance| (parametric) or the AD statistic. Selection
    takes the smallest-delta local minimum within a near-tie of the global
    minimum, refined by golden-section. Parametric points whose OLS-side
    statistic exceeds the chi-square(1) 99.9% point are excluded from the
    argmin: there the OLS probability saturates at 1 and the distance no
    longer measures the OLS-FGLS discrepancy.
    """
    grid = grid or GridConfig()
    deltas = grid_deltas(context, grid)
    values = np.empty(deltas.shape[0])
    corrs = np.empty(deltas.shape[0])
    fstats = np.empty(deltas.shape[0])
    masked = np.empty(deltas.shape[0])
    criterion = robust_criterion(context, k, mode)
    for i, d in enumerate(deltas):
        s = candidate(context, k, float(d))
        corrs[i], fstats[i] = _strength(context, s)
        if mode == "parametric":
            point = parametric_distance(context, k, float(d))
            values[i] = abs(point.distance)
            masked[i] = (np.inf if point.x2_ols > CHI2_SATURATION
                         else values[i])
        else:
            values[i] = criterion(float(d))
            masked[i] = values[i]
    kind = ("robust_parametric" if mode == "parametric"
            else "robust_nonparametric")
    locus = DeltaLocus(k=k, deltas=deltas, criterion=values, corr_s_x=corrs,
                       first_stage_F=fstats, criterion_kind=kind)
    if not np.isfinite(masked).any():
        # every point saturated: fall back to the unmasked values
        masked = values
    cand_idx = _argmin_candidates_masked(masked)
    if not cand_idx:
        return None
    i = cand_idx[0]
    lo = float(deltas[max(i - 1, 0)])
    hi = float(deltas[min(i + 1, deltas.shape[0] - 1)])
    d0 = float(deltas[i])
    if grid.refine_rounds > 0 and hi > lo:
        d0 = float(_golden(criterion, lo, hi, grid.refine_rounds))
    return DeltaZero(d0, (lo, hi)), locus


def _argmin_candidates_masked(values: np.ndarray) -> list[int]:
    n = values.shape[0]
    finite = np.isfinite(values)
    if not finite.any():
        return []
    minima = []
    for i in range(n):
        if not finite[i]:
            continue
        left_ok = i == 0 or not finite[i - 1] or values[i] <= values[i - 1]
        right_ok = i == n - 1 or not finite[i + 1] or values[i] <= values[i + 1]
        if left_ok and right_ok:
            minima.append(i)
    vmin = values[finite].min()
    vmax = values[finite].max()
    tol = max(1e-12, ARGMIN_TIE_RTOL * (vmax - vmin))
    near = [i for i in minima if values[i] <= vmin + tol]
    return near or minima
