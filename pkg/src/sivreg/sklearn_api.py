"""scikit-learn estimator wrapper around the instrument-synthesis pipeline.

SivRegressor composes with the wider sklearn ecosystem (get_params /
set_params, clone, pipelines). The first ``n_endogenous`` columns of X are
treated as endogenous regressors; the remaining columns are exogenous
controls.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .estimate import (
    ModelSpec,
    estimate,
    multi_endogenous_estimate,
    synthesize_instruments,
    two_sls,
)
from .linalg import ols
from .search import GridConfig


class SivRegressor(BaseEstimator, RegressorMixin):
    """Linear causal regression with synthesized instruments.

    Parameters
    ----------
    method : {"SIV", "RSIV_p", "RSIV_n", "OLS"}, default="SIV"
        Identification criterion for delta0 (OLS skips instrumenting).
    sign : {"auto", "positive", "negative"}, default="auto"
        Sign policy for cov(x, u); "auto" runs the two-hypothesis scan.
    n_endogenous : int, default=1
        Number of leading X columns treated as endogenous.
    delta_min, corr_floor, n_points, refine_rounds, j_min
        Grid policy forwarded to GridConfig.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Structural coefficients aligned with X's columns.
    intercept_ : float
    beta_ : ndarray of shape (n_endogenous,)
        Coefficients of the endogenous block (same values as in coef_).
    estimates_ : list of SivEstimate
        Full per-coordinate estimates with diagnostics.
    """

    def __init__(self, method="SIV", sign="auto", n_endogenous=1,
                 delta_min=1e-3, corr_floor=0.10, n_points=200,
                 refine_rounds=40, j_min=6.0):
        self.method = method
        self.sign = sign
        self.n_endogenous = n_endogenous
        self.delta_min = delta_min
        self.corr_floor = corr_floor
        self.n_points = n_points
        self.refine_rounds = refine_rounds
        self.j_min = j_min

    def _grid(self) -> GridConfig:
        return GridConfig(delta_min=self.delta_min,
                          corr_floor=self.corr_floor,
                          n_points=self.n_points,
                          refine_rounds=self.refine_rounds,
                          j_min=self.j_min)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        n, p = X.shape
        j = int(self.n_endogenous)
        if not 1 <= j <= p:
            raise ValueError("n_endogenous must be in [1, n_features]")
        endo_names = [f"x{i}" for i in range(j)]
        ctrl_names = [f"c{i}" for i in range(p - j)]
        cols = {"y": y}
        cols.update({name: X[:, i] for i, name in enumerate(endo_names)})
        cols.update({name: X[:, j + i] for i, name in enumerate(ctrl_names)})
        data = Dataset(cols)
        spec = ModelSpec(outcome="y", endogenous=tuple(endo_names),
                         controls=tuple(ctrl_names), method=self.method,
                         sign=self.sign, grid=self._grid())
        V = X[:, j:] if p > j else None
        if self.method == "OLS":
            fit = ols(X, y)
            coef = fit.coefficients
            self.intercept_ = float(coef[0])
            self.coef_ = np.asarray(coef[1:], dtype=np.float64)
            self.beta_ = self.coef_[:j].copy()
            self.estimates_ = [
                estimate(data, ModelSpec(
                    outcome="y", endogenous=name,
                    controls=tuple([e for e in endo_names if e != name]
                                   + ctrl_names),
                    method="OLS"))
                for name in endo_names]
        else:
            instruments = synthesize_instruments(data, spec)
            S = np.column_stack([si.values for si in instruments])
            beta_all, _, _ = two_sls(y, X[:, :j], V, S)
            # beta_all order: intercept, controls, endogenous
            self.intercept_ = float(beta_all[0])
            n_ctrl = p - j
            ctrl_coef = beta_all[1:1 + n_ctrl]
            endo_coef = beta_all[1 + n_ctrl:]
            self.coef_ = np.concatenate([endo_coef, ctrl_coef])
            self.beta_ = np.asarray(endo_coef, dtype=np.float64)
            if j == 1:
                self.estimates_ = [estimate(data, spec)]
            else:
                self.estimates_ = multi_endogenous_estimate(data, spec)
        self.delta0_ = np.array([e.delta0 if e.delta0 is not None else np.nan
                                 for e in self.estimates_])
        self.k_ = np.array([e.k if e.k is not None else 0
                            for e in self.estimates_])
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.intercept_ + X @ self.coef_
