"""Causal-effect estimation with synthesized instruments.

Assembles the full pipeline: context construction, sign determination,
delta0 search (moment crossing or robust argmin), two-stage least squares,
endogeneity diagnostics, and bootstrap inference that re-estimates delta0
inside every replication.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import stats as _sps

from .data import Dataset
from .exceptions import (
    AllReplicationsFailedError,
    AmbiguousSignError,
    NoEndogeneityError,
    RankDeficientError,
    SivError,
    UnderIdentifiedError,
)
from .linalg import RegressionFit, first_stage_F, ols
from .robust import chi2_cdf, robust_delta0
from .search import (
    GridConfig,
    SignDecision,
    SivContext,
    build_context,
    candidate,
    determine_sign,
)

Method = Literal["OLS", "SIV", "RSIV_p", "RSIV_n", "ExternalIV"]
SignPolicy = Literal["auto", "positive", "negative"]

SCHEMA_VERSION = 1
_Z975 = 1.959963984540054


@dataclass(frozen=True)
class ModelSpec:
    """What to estimate: variable names, method, sign policy, grid."""

    outcome: str
    endogenous: str | tuple[str, ...]
    controls: tuple[str, ...] = ()
    method: Method = "SIV"
    sign: SignPolicy = "auto"
    grid: GridConfig = field(default_factory=GridConfig)
    instruments: tuple[str, ...] = ()

    def __post_init__(self):
        if isinstance(self.endogenous, str):
            pass
        else:
            object.__setattr__(self, "endogenous", tuple(self.endogenous))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "instruments", tuple(self.instruments))
        if self.method == "ExternalIV" and not self.instruments:
            raise ValueError("ExternalIV requires instrument column names")

    @property
    def endogenous_list(self) -> list[str]:
        if isinstance(self.endogenous, str):
            return [self.endogenous]
        return list(self.endogenous)

    def sign_override(self) -> Optional[int]:
        """Map the sign policy to k (cov(x,u)>0 means k=-1)."""
        if self.sign == "auto":
            return None
        return -1 if self.sign == "positive" else +1


@dataclass(frozen=True)
class SivEstimate:
    """Single-coefficient causal estimate with diagnostics.

    delta0, k, first_stage_F and wu_hausman_p are None for method OLS (no
    instrument is constructed); serialized as JSON nulls.
    """

    beta_hat: float
    se: float
    ci_low: float
    ci_high: float
    delta0: Optional[float]
    k: Optional[int]
    method: Method
    first_stage_F: Optional[float]
    wu_hausman_p: Optional[float]
    n_used: int
    endogenous: str
    sargan_p: Optional[float] = None
    adj_r2: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "endogenous": self.endogenous,
            "beta_hat": self.beta_hat,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "delta0": self.delta0,
            "k": self.k,
            "first_stage_F": self.first_stage_F,
            "wu_hausman_p": self.wu_hausman_p,
            "sargan_p": self.sargan_p,
            "adj_r2": self.adj_r2,
            "n_used": self.n_used,
        }


@dataclass(frozen=True)
class BootstrapResult:
    """Row-resampling bootstrap of the full pipeline."""

    estimates: np.ndarray
    delta0s: np.ndarray
    mean_beta: float
    se: float
    ci_low: float
    ci_high: float
    ci_normal_low: float
    ci_normal_high: float
    B: int
    seed: int
    n_failed: int

    def __post_init__(self):
        self.estimates.flags.writeable = False
        self.delta0s.flags.writeable = False

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "B": self.B,
            "seed": self.seed,
            "n_failed": self.n_failed,
            "mean_beta": self.mean_beta,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "ci_normal_low": self.ci_normal_low,
            "ci_normal_high": self.ci_normal_high,
            "estimates": [float(b) for b in self.estimates],
            "delta0s": [float(d) for d in self.delta0s],
        }


def _control_matrix(dataset: Dataset, controls: Sequence[str]):
    if not controls:
        return None
    return np.column_stack([dataset[c] for c in controls])


def _ols_coef_se(design: np.ndarray | None, y: np.ndarray,
                 intercept: bool = True) -> tuple[RegressionFit, np.ndarray]:
    fit = ols(design, y, intercept=intercept)
    n = y.shape[0]
    cols = [np.ones(n)] if intercept else []
    if design is not None:
        arr = np.asarray(design, dtype=np.float64)
        cols.append(arr[:, None] if arr.ndim == 1 else arr)
    X = np.column_stack(cols)
    sigma2 = fit.sse / fit.dof
    xtx_inv = np.linalg.inv(X.T @ X)
    return fit, np.sqrt(sigma2 * np.diag(xtx_inv))


def two_sls(y, endogenous, controls, instruments):
    """Two-stage least squares with an implicit intercept.

    endogenous: (n,) or (n, J); instruments: (n,) or (n, q) with q >= J;
    controls: (n, k) matrix or None. Returns (coefficients, residuals, se)
    where coefficients are ordered [intercept, controls..., endogenous...]
    and residuals use the original (not projected) regressors.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    X_en = np.asarray(endogenous, dtype=np.float64)
    if X_en.ndim == 1:
        X_en = X_en[:, None]
    Z_in = np.asarray(instruments, dtype=np.float64)
    if Z_in.ndim == 1:
        Z_in = Z_in[:, None]
    if Z_in.shape[1] < X_en.shape[1]:
        raise UnderIdentifiedError(
            f"{Z_in.shape[1]} instruments for {X_en.shape[1]} endogenous "
            "regressors")
    V = None if controls is None else np.asarray(controls, dtype=np.float64)
    if V is not None and V.ndim == 1:
        V = V[:, None]
    exog = [np.ones(n)] + ([V] if V is not None else [])
    Z = np.column_stack(exog + [Z_in])
    # first stage: project each endogenous column onto the instrument set
    fitted_cols = []
    for j in range(X_en.shape[1]):
        fs = ols(Z[:, 1:], X_en[:, j])
        fitted_cols.append(fs.fitted)
    Xhat = np.column_stack(exog + [np.column_stack(fitted_cols)])
    X = np.column_stack(exog + [X_en])
    second = ols(Xhat[:, 1:], y)
    beta = second.coefficients
    residuals = y - X @ beta
    dof = n - X.shape[1]
    if dof < 1:
        raise RankDeficientError("no residual degrees of freedom in 2SLS")
    sigma2 = float(residuals @ residuals) / dof
    try:
        cov = sigma2 * np.linalg.inv(Xhat.T @ Xhat)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(str(exc)) from exc
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return beta, residuals, se


def wu_hausman(dataset: Dataset, spec: ModelSpec,
               instrument: np.ndarray) -> float:
    """Control-function endogeneity test.

    Appends the first-stage residual of the endogenous regressor on the
    instrument (and controls) to the structural OLS and returns the p-value
    of its t test. A zero first-stage residual (instrument equals the
    regressor) carries no information and reports exactly 1.0.
    """
    x = dataset[spec.endogenous_list[0]]
    y = dataset[spec.outcome]
    V = _control_matrix(dataset, spec.controls)
    fs_design = (np.column_stack([V, instrument]) if V is not None
                 else np.asarray(instrument, dtype=np.float64))
    vhat = ols(fs_design, x).residuals
    if float(np.abs(vhat).max()) <= 1e-12 * max(float(np.abs(x).max()), 1.0):
        return 1.0
    aug = (np.column_stack([V, x, vhat]) if V is not None
           else np.column_stack([x, vhat]))
    fit, se = _ols_coef_se(aug, y)
    t = fit.coefficients[-1] / se[-1]
    return float(2.0 * _sps.t.sf(abs(t), fit.dof))


def _adjusted_r2(y: np.ndarray, residuals: np.ndarray, n_params: int) -> float:
    n = y.shape[0]
    sst = float(((y - y.mean()) ** 2).sum())
    sse = float(residuals @ residuals)
    if sst <= 0 or n - n_params < 1:
        return float("nan")
    return 1.0 - (sse / (n - n_params)) / (sst / (n - 1))


def _sign_decision(context: SivContext, spec: ModelSpec) -> SignDecision:
    # the verdict is always dt-based; the pipeline only needs the chosen
    # sign's robust locus, evaluated once in _resolve_delta0
    return determine_sign(context, spec.grid, "dt_moment",
                          sign_override=spec.sign_override())


def _resolve_delta0(context: SivContext, spec: ModelSpec,
                    decision: SignDecision) -> tuple[int, float]:
    if decision.verdict == "no_endogeneity":
        raise NoEndogeneityError(
            "no moment crossing under either sign; x appears exogenous — "
            "use method OLS")
    if decision.verdict == "ambiguous":
        raise AmbiguousSignError(
            "both signs admit a moment crossing; supply an explicit sign "
            "override")
    k = decision.k
    assert k is not None
    if spec.method == "SIV":
        d0 = decision.delta0_minus if k == -1 else decision.delta0_plus
        if d0 is None:
            raise NoEndogeneityError(
                "no moment crossing under the requested sign — use method OLS")
        return k, float(d0)
    mode = "parametric" if spec.method == "RSIV_p" else "nonparametric"
    result = robust_delta0(context, k, spec.grid, mode)
    if result is None:
        raise NoEndogeneityError("robust locus empty under the chosen sign")
    zero, _locus = result
    return k, float(zero.delta0)


def _iv_beta_se(context: SivContext, s: np.ndarray) -> tuple[float, float]:
    """Exactly-identified IV slope and analytic homoscedastic SE, rescaled
    to original (partialled) units."""
    sc = s - s.mean()
    cov_sy = float(np.mean(sc * context.y))
    cov_sx = float(np.mean(sc * context.x))
    beta_std = cov_sy / cov_sx
    u = context.y - beta_std * context.x
    sigma2 = float(u @ u) / max(context.n - 2, 1)
    var_beta = sigma2 * float(np.mean(sc * sc)) / (context.n * cov_sx ** 2)
    scale = context.sd_y / context.sd_x
    return beta_std * scale, float(np.sqrt(max(var_beta, 0.0))) * scale


def _estimate_ols(dataset: Dataset, spec: ModelSpec) -> SivEstimate:
    y = dataset[spec.outcome]
    x = dataset[spec.endogenous_list[0]]
    V = _control_matrix(dataset, spec.controls)
    design = np.column_stack([V, x]) if V is not None else x
    fit, se = _ols_coef_se(design, y)
    beta = float(fit.coefficients[-1])
    s = float(se[-1])
    return SivEstimate(
        beta_hat=beta, se=s,
        ci_low=beta - _Z975 * s, ci_high=beta + _Z975 * s,
        delta0=None, k=None, method="OLS",
        first_stage_F=None, wu_hausman_p=None,
        n_used=dataset.n_rows, endogenous=spec.endogenous_list[0],
        adj_r2=_adjusted_r2(y, fit.residuals, len(fit.coefficients)))


def _estimate_external_iv(dataset: Dataset, spec: ModelSpec) -> SivEstimate:
    dataset.require(list(spec.instruments))
    y = dataset[spec.outcome]
    x = dataset[spec.endogenous_list[0]]
    V = _control_matrix(dataset, spec.controls)
    Z = np.column_stack([dataset[c] for c in spec.instruments])
    beta_all, residuals, se_all = two_sls(y, x, V, Z)
    beta, s = float(beta_all[-1]), float(se_all[-1])
    # first-stage F for the excluded instruments via partialled frame
    from .linalg import partial_out

    xp = partial_out(x, V)
    zp = np.column_stack([partial_out(Z[:, j], V) for j in range(Z.shape[1])])
    fs = ols(zp, xp)
    fstat = first_stage_F(fs, n_instruments=Z.shape[1])
    wu = wu_hausman(dataset, spec, Z[:, 0] if Z.shape[1] == 1 else ols(
        np.column_stack([V, Z]) if V is not None else Z, x).fitted)
    sargan_p = None
    if Z.shape[1] > 1:
        aux = ols(np.column_stack([V, Z]) if V is not None else Z, residuals)
        r2 = aux.ssr / (aux.ssr + aux.sse) if (aux.ssr + aux.sse) > 0 else 0.0
        stat = dataset.n_rows * r2
        sargan_p = 1.0 - chi2_cdf(stat, df=Z.shape[1] - 1)
    return SivEstimate(
        beta_hat=beta, se=s,
        ci_low=beta - _Z975 * s, ci_high=beta + _Z975 * s,
        delta0=None, k=None, method="ExternalIV",
        first_stage_F=fstat, wu_hausman_p=wu,
        n_used=dataset.n_rows, endogenous=spec.endogenous_list[0],
        sargan_p=sargan_p,
        adj_r2=_adjusted_r2(y, residuals, 2 + len(spec.controls)))


def estimate(dataset: Dataset, spec: ModelSpec) -> SivEstimate:
    """Run the full pipeline for a single endogenous regressor.

    SIV finds delta0 as the smallest material crossing of the moment locus;
    RSIV_p / RSIV_n minimize the parametric / Anderson-Darling robust locus.
    The instrument is s = x + k*delta0*r and the coefficient is the
    exactly-identified IV ratio on partialled data, rescaled to original
    units. Raises NoEndogeneityError / AmbiguousSignError when the sign scan
    fails, advising OLS or an explicit override.
    """
    if len(spec.endogenous_list) != 1:
        raise ValueError("estimate() handles one endogenous regressor; "
                         "use multi_endogenous_estimate")
    if spec.method == "OLS":
        return _estimate_ols(dataset, spec)
    if spec.method == "ExternalIV":
        return _estimate_external_iv(dataset, spec)
    context = build_context(dataset, spec.outcome, spec.endogenous_list[0],
                            list(spec.controls))
    decision = _sign_decision(context, spec)
    k, delta0 = _resolve_delta0(context, spec, decision)
    s = candidate(context, k, delta0)
    beta, se = _iv_beta_se(context, s)
    fs = ols(s, context.x)
    fstat = first_stage_F(fs)
    wu = wu_hausman(dataset, spec, s)
    # structural residuals in original units: controls refitted given beta
    y_raw = dataset[spec.outcome]
    x_raw = dataset[spec.endogenous_list[0]]
    V = _control_matrix(dataset, spec.controls)
    ctrl_fit = ols(V, y_raw - beta * x_raw)
    adj = _adjusted_r2(y_raw, ctrl_fit.residuals, 2 + len(spec.controls))
    return SivEstimate(
        beta_hat=beta, se=se,
        ci_low=beta - _Z975 * se, ci_high=beta + _Z975 * se,
        delta0=delta0, k=k, method=spec.method,
        first_stage_F=fstat, wu_hausman_p=wu,
        n_used=dataset.n_rows, endogenous=spec.endogenous_list[0],
        adj_r2=adj)


def bootstrap(dataset: Dataset, spec: ModelSpec, B: int, seed: int,
              threads: int = 1) -> BootstrapResult:
    """Row-resampling bootstrap re-running the full pipeline per replication.

    The endogeneity sign is determined once on the full data (or taken from
    the spec override) and held fixed across replications; delta0 is
    re-estimated inside every replication so its sampling variability enters
    the intervals. Failed replications (degenerate resamples, lost crossing)
    are counted, not fatal. Fully deterministic given (dataset, spec, B,
    seed) and independent of the thread count.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if spec.method in ("OLS", "ExternalIV"):
        fixed_spec = spec
    else:
        context = build_context(dataset, spec.outcome,
                                spec.endogenous_list[0], list(spec.controls))
        decision = _sign_decision(context, spec)
        k, _ = _resolve_delta0(context, spec, decision)
        fixed_spec = replace(spec,
                             sign="positive" if k == -1 else "negative")
    seeds = np.random.SeedSequence(seed).spawn(B)

    def one(b: int):
        rng = np.random.default_rng(seeds[b])
        idx = rng.integers(0, dataset.n_rows, size=dataset.n_rows)
        try:
            est = estimate(dataset.take(idx), fixed_spec)
            return est.beta_hat, est.delta0
        except SivError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    good = [r for r in results if r is not None]
    if not good:
        raise AllReplicationsFailedError(f"all {B} replications failed")
    betas = np.array([g[0] for g in good], dtype=np.float64)
    d0s = np.array([np.nan if g[1] is None else g[1] for g in good],
                   dtype=np.float64)
    mean = float(betas.mean())
    sd = float(betas.std(ddof=1)) if betas.size > 1 else 0.0
    lo, hi = np.percentile(betas, [2.5, 97.5])
    return BootstrapResult(
        estimates=betas, delta0s=d0s, mean_beta=mean, se=sd,
        ci_low=float(lo), ci_high=float(hi),
        ci_normal_low=mean - _Z975 * sd, ci_normal_high=mean + _Z975 * sd,
        B=B, seed=seed, n_failed=B - len(good))


@dataclass(frozen=True)
class SyntheticInstrument:
    """A synthesized instrument for one endogenous regressor."""

    name: str
    k: int
    delta0: float
    values: np.ndarray
    first_stage_F: float
    wu_hausman_p: float

    def __post_init__(self):
        self.values.flags.writeable = False


def synthesize_instruments(dataset: Dataset,
                           spec: ModelSpec) -> list[SyntheticInstrument]:
    """Per-coordinate instrument synthesis (FWL reduction).

    For each endogenous regressor, the controls plus the other endogenous
    regressors are partialled out, the single-variable search runs, and
    s = x + k*delta0*r is returned together with its strength diagnostics.
    """
    names = spec.endogenous_list
    out = []
    for name in names:
        others = [n for n in names if n != name]
        sub = replace(spec, endogenous=name,
                      controls=tuple(list(spec.controls) + others))
        context = build_context(dataset, spec.outcome, name,
                                list(sub.controls))
        decision = _sign_decision(context, sub)
        k, d0 = _resolve_delta0(context, sub, decision)
        s = candidate(context, k, d0)
        fstat = first_stage_F(ols(s, context.x))
        wu = wu_hausman(dataset, sub, s)
        out.append(SyntheticInstrument(name=name, k=k, delta0=d0,
                                       values=s, first_stage_F=fstat,
                                       wu_hausman_p=wu))
    return out


def multi_endogenous_estimate(dataset: Dataset,
                              spec: ModelSpec) -> list[SivEstimate]:
    """Frisch-Waugh-Lovell extension to several endogenous regressors.

    Each coordinate's instrument is synthesized after partialling out the
    controls and the other endogenous regressors; the final coefficients come
    from one joint 2SLS with the full instrument matrix. SEs and CIs are the
    joint-2SLS analytic ones.
    """
    names = spec.endogenous_list
    y = dataset[spec.outcome]
    V = _control_matrix(dataset, spec.controls)
    instruments = synthesize_instruments(dataset, spec)
    per_coord = [(si.k, si.delta0, si.first_stage_F, si.wu_hausman_p)
                 for si in instruments]
    X_en = np.column_stack([dataset[n] for n in names])
    S = np.column_stack([si.values for si in instruments])
    beta_all, residuals, se_all = two_sls(y, X_en, V, S)
    n_ctrl = 1 + len(spec.controls)
    out = []
    for j, name in enumerate(names):
        beta = float(beta_all[n_ctrl + j])
        se = float(se_all[n_ctrl + j])
        k, d0, fstat, wu = per_coord[j]
        out.append(SivEstimate(
            beta_hat=beta, se=se,
            ci_low=beta - _Z975 * se, ci_high=beta + _Z975 * se,
            delta0=d0, k=k, method=spec.method,
            first_stage_F=fstat, wu_hausman_p=wu,
            n_used=dataset.n_rows, endogenous=name,
            adj_r2=_adjusted_r2(y, residuals,
                                n_ctrl + len(names))))
    return out


def estimate_to_json(est: SivEstimate,
                     boot: Optional[BootstrapResult] = None) -> str:
    """Stable JSON serialization (fixed key order, repr floats)."""
    payload: dict = {"estimate": est.to_json_dict()}
    if boot is not None:
        payload["bootstrap"] = boot.to_json_dict()
    return json.dumps(payload, indent=2)
