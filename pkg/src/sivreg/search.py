"""Synthesis of candidate instruments and the homoscedastic moment search.

The search space is the one-parameter family s(delta) = x + k*delta*r built
from the partialled, standardized outcome/regressor pair: r is the
standardized residual of y on x, orthogonal to x in sample. The moment
criterion is the sample covariance between squared first-stage residuals and
the candidate instrument; its zero locates delta0, and which sign k admits a
zero identifies the direction of endogeneity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np

from .data import Dataset
from .exceptions import (
    DegenerateDirectionError,
    DegenerateVarianceError,
    EmptyGridError,
)
from .linalg import F_CAP, partial_out

CriterionKind = Literal["dt_moment", "robust_parametric", "robust_nonparametric"]

BISECT_VALUE_TOL = 1e-10
BISECT_WIDTH_TOL = 1e-8


@dataclass(frozen=True)
class SivContext:
    """Partialled, standardized data for the instrument search.

    y and x have zero mean and unit variance; r is the standardized residual
    of y on x, sign-normalized so corr(y, r) > 0. sd_y/sd_x rescale slope
    estimates back to the original (partialled) units.
    """

    y: np.ndarray
    x: np.ndarray
    r: np.ndarray
    n: int
    sd_y: float
    sd_x: float

    def __post_init__(self):
        for name in ("y", "x", "r"):
            getattr(self, name).flags.writeable = False


@dataclass(frozen=True)
class GridConfig:
    """Delta-grid policy.

    The grid is log-spaced on [delta_min, delta_bar] where delta_bar is the
    largest delta keeping corr(s, x) >= corr_floor. j_min gates crossing
    materiality: a sign change only counts when the moment's J statistic
    (n * mbar^2 / var(m_i), chi-square(1)-scaled under the null) reaches
    j_min on both flanking segments of the locus; 0 disables the gate.
    """

    delta_min: float = 1e-3
    corr_floor: float = 0.10
    n_points: int = 200
    refine_rounds: int = 40
    j_min: float = 6.0

    def __post_init__(self):
        if not self.delta_min > 0:
            raise ValueError("delta_min must be positive")
        if not 0 < self.corr_floor < 1:
            raise ValueError("corr_floor must be in (0, 1)")
        if self.n_points < 10:
            raise ValueError("n_points must be at least 10")
        if self.refine_rounds < 0:
            raise ValueError("refine_rounds must be nonnegative")
        if self.j_min < 0:
            raise ValueError("j_min must be nonnegative")

    def delta_bar(self, var_x: float = 1.0, var_r: float = 1.0) -> float:
        """Largest delta with corr(s, x) >= corr_floor (r orthogonal to x)."""
        c = self.corr_floor
        return float(np.sqrt((1.0 / (c * c) - 1.0) * var_x / var_r))


@dataclass(frozen=True)
class DeltaLocus:
    """Criterion values sampled along the delta grid for one sign k."""

    k: int
    deltas: np.ndarray
    criterion: np.ndarray
    corr_s_x: np.ndarray
    first_stage_F: np.ndarray
    criterion_kind: CriterionKind
    j_stats: np.ndarray | None = None

    def __post_init__(self):
        if not (np.diff(self.deltas) > 0).all():
            raise ValueError("locus deltas must be strictly increasing")
        for arr in (self.deltas, self.criterion, self.corr_s_x,
                    self.first_stage_F):
            if not np.isfinite(arr).all():
                raise ValueError("locus contains non-finite values")
            arr.flags.writeable = False
        if self.j_stats is not None:
            self.j_stats.flags.writeable = False

    def __len__(self) -> int:
        return int(self.deltas.shape[0])

    def to_csv(self, path: str | Path) -> None:
        """Serialize as delta, criterion, corr_s_x, first_stage_F."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["delta", "criterion", "corr_s_x",
                             "first_stage_F"])
            for i in range(len(self)):
                writer.writerow([repr(float(self.deltas[i])),
                                 repr(float(self.criterion[i])),
                                 repr(float(self.corr_s_x[i])),
                                 repr(float(self.first_stage_F[i]))])


@dataclass(frozen=True)
class DeltaZero:
    """A located delta0 with its bracketing interval."""

    delta0: float
    bracket: tuple[float, float]


Verdict = Literal["positive_cov_xu", "negative_cov_xu", "no_endogeneity",
                  "ambiguous"]


@dataclass(frozen=True)
class SignDecision:
    """Outcome of the two-hypothesis sign scan.

    delta0_plus/delta0_minus are the moment crossings found under k=+1 and
    k=-1 (None when that branch has no material crossing).
    """

    verdict: Verdict
    k: Optional[int]
    delta0_plus: Optional[float]
    delta0_minus: Optional[float]
    locus_plus: DeltaLocus
    locus_minus: DeltaLocus


def build_context(dataset: Dataset, outcome: str, endogenous: str,
                  controls: list[str] | None = None) -> SivContext:
    """Partial out controls, standardize, and build the orthogonal direction.

    y and x become residuals on [1, controls], standardized to unit variance;
    r is the unit-variance residual of y on x with corr(y, r) > 0 enforced.
    Raises DegenerateDirectionError when y and x are collinear (no direction
    orthogonal to x exists within their span).
    """
    controls = list(controls or [])
    dataset.require([outcome, endogenous] + controls)
    V = (np.column_stack([dataset[c] for c in controls]) if controls
         else None)
    yp = partial_out(dataset[outcome], V)
    xp = partial_out(dataset[endogenous], V)
    sd_y = float(yp.std())
    sd_x = float(xp.std())
    if sd_x <= 0 or sd_y <= 0:
        raise DegenerateVarianceError(
            "outcome or endogenous regressor constant after partialling")
    ys = yp / sd_y
    xs = xp / sd_x
    slope = float(xs @ ys) / float(xs @ xs)
    r_raw = ys - slope * xs
    sd_r = float(r_raw.std())
    if sd_r <= 1e-8:
        raise DegenerateDirectionError(
            "outcome is collinear with the endogenous regressor; no "
            "orthogonal direction exists (corr(x, y) = +/-1)")
    r = r_raw / sd_r
    if float(np.mean(ys * r)) < 0:
        r = -r
    return SivContext(y=ys, x=xs, r=r, n=int(ys.shape[0]),
                      sd_y=sd_y, sd_x=sd_x)


def candidate(context: SivContext, k: int, delta: float) -> np.ndarray:
    """Candidate instrument s = x + k*delta*r."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if k not in (-1, 1):
        raise ValueError("k must be -1 or +1")
    if delta == 0.0:
        return context.x
    return context.x + (k * delta) * context.r


def _first_stage(x: np.ndarray, s: np.ndarray):
    """Bivariate OLS of x on [1, s]; returns (residuals, centered s)."""
    sc = s - s.mean()
    den = float(sc @ sc)
    if den <= 0.0:
        raise DegenerateVarianceError("candidate instrument is constant")
    gamma = float(sc @ x) / den
    resid = x - x.mean() - gamma * sc
    return resid, sc


def dt_moment(context: SivContext, s: np.ndarray) -> float:
    """Sample moment: covariance of squared first-stage residuals with s.

    Fits x = a + gamma*s + e by OLS, sets sigma2 = SSE/n, and returns
    mean((e_i^2 - sigma2) * (s_i - mean(s))) — the sample covariance between
    e^2 and the instrument, invariant to shifting s by a constant.
    """
    return dt_moment_stats(context, s)[0]


def dt_moment_stats(context: SivContext, s: np.ndarray) -> tuple[float, float]:
    """Moment value together with its J statistic n*mbar^2/var(m_i)."""
    resid, sc = _first_stage(context.x, s)
    e2 = resid * resid
    m_i = (e2 - e2.mean()) * sc
    mbar = float(m_i.mean())
    spread = float(((m_i - mbar) ** 2).mean())
    if spread <= 0.0:
        j = 0.0 if mbar == 0.0 else np.inf
    else:
        j = context.n * mbar * mbar / spread
    return mbar, float(j)


def _strength(context: SivContext, s: np.ndarray) -> tuple[float, float]:
    """(corr(s, x), first-stage F) for one candidate."""
    sc = s - s.mean()
    xc = context.x - context.x.mean()
    den = float(np.sqrt((sc @ sc) * (xc @ xc)))
    corr = float(sc @ xc) / den if den > 0 else 0.0
    resid, _ = _first_stage(context.x, s)
    sse = float(resid @ resid)
    total = float(xc @ xc)
    if sse <= total * 1e-14:
        f = F_CAP
    else:
        f = (total - sse) / (sse / (context.n - 2))
    return corr, float(min(max(f, 0.0), F_CAP))


def grid_deltas(context: SivContext, grid: GridConfig) -> np.ndarray:
    """Log-spaced deltas on [delta_min, delta_bar]."""
    var_x = float(context.x.var())
    var_r = float(context.r.var())
    dbar = grid.delta_bar(var_x, var_r)
    if dbar < grid.delta_min:
        raise EmptyGridError(
            f"delta_bar={dbar:.3g} below delta_min={grid.delta_min:.3g}")
    return np.geomspace(grid.delta_min, dbar, grid.n_points)


def scan_locus(context: SivContext, k: int, grid: GridConfig,
               criterion_kind: CriterionKind = "dt_moment",
               criterion: Callable[[float], float] | None = None) -> DeltaLocus:
    """Evaluate the chosen criterion over the delta grid.

    For dt_moment the criterion is built in (and J statistics are recorded);
    robust kinds require ``criterion`` — a callable mapping delta to the
    locus value (|parametric distance| or the AD statistic).
    """
    deltas = grid_deltas(context, grid)
    values = np.empty(deltas.shape[0])
    corrs = np.empty(deltas.shape[0])
    fstats = np.empty(deltas.shape[0])
    jstats = np.empty(deltas.shape[0]) if criterion_kind == "dt_moment" else None
    if criterion_kind != "dt_moment" and criterion is None:
        raise ValueError(f"{criterion_kind} requires a criterion callable")
    for i, d in enumerate(deltas):
        s = candidate(context, k, float(d))
        corrs[i], fstats[i] = _strength(context, s)
        if criterion_kind == "dt_moment":
            values[i], jstats[i] = dt_moment_stats(context, s)
        else:
            values[i] = criterion(float(d))
    return DeltaLocus(k=k, deltas=deltas, criterion=values, corr_s_x=corrs,
                      first_stage_F=fstats, criterion_kind=criterion_kind,
                      j_stats=jstats)


def _material_crossings(locus: DeltaLocus, j_min: float) -> list[int]:
    """Indices i with a sign change between points i and i+1 whose flanking
    segments both attain the J threshold."""
    mv = locus.criterion
    sign = np.sign(mv)
    idx = [i for i in range(len(mv) - 1)
           if sign[i] != 0 and sign[i + 1] != 0 and sign[i] != sign[i + 1]]
    # exact zeros on the grid are crossings in their own right
    idx.extend(i for i in range(len(mv)) if sign[i] == 0)
    idx = sorted(set(idx))
    if locus.j_stats is None or j_min <= 0:
        return idx
    jv = locus.j_stats
    bounds = [0] + [i + 1 for i in idx] + [len(mv)]
    keep = []
    for pos, i in enumerate(idx):
        left = jv[bounds[pos]:i + 1]
        right = jv[i + 1:bounds[pos + 2]]
        if (left.size and right.size
                and left.max() >= j_min and right.max() >= j_min):
            keep.append(i)
    return keep


def _bisect(criterion: Callable[[float], float], lo: float, hi: float,
            f_lo: float, f_hi: float) -> float:
    """Bisection to |value| <= BISECT_VALUE_TOL or width <= BISECT_WIDTH_TOL."""
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    for _ in range(200):
        if hi - lo <= BISECT_WIDTH_TOL:
            break
        mid = 0.5 * (lo + hi)
        f_mid = criterion(mid)
        if abs(f_mid) <= BISECT_VALUE_TOL or f_mid == 0.0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden(criterion: Callable[[float], float], lo: float, hi: float,
            rounds: int) -> float:
    """Golden-section minimization over [lo, hi] with a fixed round count."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = criterion(c), criterion(d)
    for _ in range(rounds):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = criterion(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = criterion(d)
    return 0.5 * (a + b)


ARGMIN_TIE_RTOL = 0.02


def _argmin_candidates(locus: DeltaLocus) -> list[int]:
    """Local minima (interior or boundary) of the locus values, smallest-delta
    near-ties of the global minimum first."""
    v = locus.criterion
    n = len(v)
    finite = np.isfinite(v)
    if not finite.any():
        return []
    minima = []
    for i in range(n):
        if not finite[i]:
            continue
        left_ok = i == 0 or not finite[i - 1] or v[i] <= v[i - 1]
        right_ok = i == n - 1 or not finite[i + 1] or v[i] <= v[i + 1]
        if left_ok and right_ok:
            minima.append(i)
    vmin = float(np.nanmin(np.where(finite, v, np.nan)))
    vmax = float(np.nanmax(np.where(finite, v, np.nan)))
    tol = max(1e-12, ARGMIN_TIE_RTOL * (vmax - vmin))
    near = [i for i in minima if v[i] <= vmin + tol]
    return near or minima


def find_delta0(locus: DeltaLocus,
                criterion: Callable[[float], float] | None = None,
                grid: GridConfig | None = None) -> Optional[DeltaZero]:
    """Extract delta0 from a scanned locus.

    dt_moment: the smallest material sign change, refined by bisection when
    the criterion callable is available (linear interpolation otherwise).
    Returns None when no material crossing exists — the no-endogeneity /
    wrong-sign signal.

    Robust kinds: the smallest near-minimal local minimum of the (nonnegative)
    locus, refined by golden-section around its bracketing neighbors.
    """
    j_min = (grid.j_min if grid is not None else GridConfig().j_min)
    if locus.criterion_kind == "dt_moment":
        idx = _material_crossings(locus, j_min)
        if not idx:
            return None
        i = idx[0]
        v = locus.criterion
        if np.sign(v[i]) == 0:
            d = float(locus.deltas[i])
            return DeltaZero(d, (d, d))
        lo, hi = float(locus.deltas[i]), float(locus.deltas[i + 1])
        if criterion is not None:
            d0 = _bisect(criterion, lo, hi, float(v[i]), float(v[i + 1]))
        else:
            d0 = lo + (hi - lo) * (-v[i] / (v[i + 1] - v[i]))
        return DeltaZero(float(d0), (lo, hi))
    cand = _argmin_candidates(locus)
    if not cand:
        return None
    i = cand[0]
    lo = float(locus.deltas[max(i - 1, 0)])
    hi = float(locus.deltas[min(i + 1, len(locus) - 1)])
    d0 = float(locus.deltas[i])
    rounds = grid.refine_rounds if grid is not None else GridConfig().refine_rounds
    if criterion is not None and rounds > 0 and hi > lo:
        d0 = float(_golden(criterion, lo, hi, rounds))
    return DeltaZero(d0, (lo, hi))


def determine_sign(context: SivContext, grid: GridConfig | None = None,
                   criterion_kind: CriterionKind = "dt_moment",
                   criterion_factory: Callable[[SivContext, int],
                                               Callable[[float], float]] | None = None,
                   sign_override: Optional[int] = None) -> SignDecision:
    """Decide the sign of cov(x, u) by scanning both k hypotheses.

    The verdict always comes from the dt-moment crossing logic (a robust
    criterion's argmin exists under either sign, so it cannot carry sign
    information); for robust criterion kinds the recorded loci are those of
    the requested criterion, via ``criterion_factory(context, k)``.

    With ``sign_override`` (+1/-1) the dt scan for the other sign is skipped
    and the verdict reflects the override.
    """
    grid = grid or GridConfig()

    def dt_scan(k: int):
        locus = scan_locus(context, k, grid, "dt_moment")
        zero = find_delta0(
            locus, criterion=lambda d: dt_moment(context, candidate(context, k, d)),
            grid=grid)
        return locus, zero

    loci: dict[int, DeltaLocus] = {}
    zeros: dict[int, Optional[DeltaZero]] = {-1: None, +1: None}
    if sign_override is None:
        for k in (+1, -1):
            loci[k], zeros[k] = dt_scan(k)
    else:
        if sign_override not in (-1, 1):
            raise ValueError("sign_override must be -1 or +1")
        loci[sign_override], zeros[sign_override] = dt_scan(sign_override)
        other = -sign_override
        loci[other] = scan_locus(context, other, grid, "dt_moment")

    if criterion_kind != "dt_moment":
        if criterion_factory is None:
            raise ValueError("robust criterion kinds need a criterion_factory")
        for k in (+1, -1):
            loci[k] = scan_locus(context, k, grid, criterion_kind,
                                 criterion_factory(context, k))

    found_minus = zeros[-1] is not None
    found_plus = zeros[+1] is not None
    if sign_override is not None:
        verdict: Verdict = ("positive_cov_xu" if sign_override == -1
                            else "negative_cov_xu")
        k: Optional[int] = sign_override
    elif found_minus and found_plus:
        verdict, k = "ambiguous", None
    elif found_minus:
        verdict, k = "positive_cov_xu", -1
    elif found_plus:
        verdict, k = "negative_cov_xu", +1
    else:
        verdict, k = "no_endogeneity", None
    return SignDecision(
        verdict=verdict,
        k=k,
        delta0_plus=zeros[+1].delta0 if zeros[+1] else None,
        delta0_minus=zeros[-1].delta0 if zeros[-1] else None,
        locus_plus=loci[+1],
        locus_minus=loci[-1],
    )
