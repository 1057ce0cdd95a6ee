"""Monte Carlo data-generating process with known truth (beta = 2).

The regressor is a sinh-arcsinh transform of an equally spaced design plus
uniform noise; the structural error has an endogenous component (the centered
regressor plus noise whose variance carries a linear profile in x) and an
exogenous skewed component built from a sinh-arcsinh noise source,
residualized on the regressors and rescaled. The generator is fully
deterministic given the seed, with per-generation/per-draw stream splitting
so parallel runs reproduce serial ones.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np

from .data import Dataset
from .estimate import ModelSpec, estimate
from .exceptions import SivError

Endogeneity = Literal["positive", "negative", "none"]

BETA_TRUE = 2.0


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design and generator constants.

    The structural constants (nu_range, variance_slope, quad_error_weight,
    skew_shift, skew_kappa) realize the under-specified pieces of the
    published recipe and are calibrated so the moment search recovers the
    true effect; they are exposed rather than hard-coded.
    """

    population_size: int = 100_000
    sample_size: int = 1_000
    n_generations: int = 50
    n_bootstrap_per_generation: int = 10
    endogeneity_sign: Endogeneity = "positive"
    seed: int = 0
    nu_range: tuple[float, float] = (0.0, 4.0)
    variance_slope: float = -1.1
    quad_error_weight: float = 0.25
    skew_shift: float = 0.898
    skew_kappa: float = 1.0
    heteroscedastic_variant: bool = False
    abs_scale: float = 3.0

    def __post_init__(self):
        if self.sample_size > self.population_size:
            raise ValueError("sample_size cannot exceed population_size")
        if min(self.population_size, self.sample_size,
               self.n_generations, self.n_bootstrap_per_generation) < 1:
            raise ValueError("all design counts must be >= 1")
        if self.nu_range[1] <= self.nu_range[0]:
            raise ValueError("nu_range must be increasing")


@dataclass(frozen=True)
class McRow:
    method: str
    mean_beta: float
    std_error: float
    ci_low: float
    ci_high: float
    bias: float
    rmse: float
    n_estimates: int
    n_failed: int


@dataclass(frozen=True)
class McSummary:
    """Per-method Monte Carlo performance rows."""

    rows: tuple[McRow, ...]
    beta_true: float
    config: DgpConfig

    def row(self, method: str) -> McRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# beta_true={self.beta_true!r} config={self.config}\n")
            for r in self.rows:
                fh.write(f"# {r.method}: n_estimates={r.n_estimates} "
                         f"n_failed={r.n_failed}\n")
            writer = csv.writer(fh)
            writer.writerow(["method", "mean_beta", "std_error", "ci_low",
                             "ci_high", "bias", "rmse"])
            for r in self.rows:
                writer.writerow([r.method, repr(r.mean_beta),
                                 repr(r.std_error), repr(r.ci_low),
                                 repr(r.ci_high), repr(r.bias), repr(r.rmse)])


def sinh_arcsinh(value, epsilon: float, kappa: float):
    """H(v; epsilon, kappa) = sinh(kappa * asinh(v) - epsilon), elementwise."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return np.sinh(kappa * np.arcsinh(np.asarray(value, dtype=np.float64))
                   - epsilon)


def generate_population(config: DgpConfig,
                        rng: np.random.Generator | None = None,
                        ) -> tuple[Dataset, dict]:
    """Generate one synthetic population.

    Returns the dataset (columns y, x, w) and a truth record with the causal
    coefficient and the configured endogeneity direction. Draw order is
    fixed: regressor noise, w, variance noise, skew noise, uniform error
    component — so populations with different endogeneity_sign share x and w
    under the same seed.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.population_size
    nu = np.linspace(config.nu_range[0], config.nu_range[1], n)
    x = 7.0 * sinh_arcsinh(nu, 0.0, 0.5) + 1.1 * rng.uniform(-1.01, 1.01, n)
    w = rng.normal(20.0, 10.0, n)
    x_sd = float(x.std())
    x_std = (x - x.mean()) / x_sd
    z_var = rng.normal(0.0, 1.0, n)
    z_skew = rng.normal(0.0, 1.0, n)
    u_unif = rng.uniform(-0.5, 0.5, n)

    profile = np.clip(1.0 + config.variance_slope * x_std, 0.05, None)
    if config.heteroscedastic_variant:
        profile = profile * (1.0 + np.abs(x_std) / config.abs_scale) ** 2
    profile = profile / profile.mean()
    eps = z_var * x_sd * np.sqrt(profile)

    e = (x - x.mean()) + eps
    skew_noise = sinh_arcsinh(z_skew, config.skew_shift, config.skew_kappa)
    u1 = u_unif + skew_noise - config.quad_error_weight * x_std ** 2
    design = np.column_stack([np.ones(n), x, w])
    coef, *_ = np.linalg.lstsq(design, u1, rcond=None)
    v = (u1 - design @ coef) * (float(x.mean()) / 2.0)

    if config.endogeneity_sign == "positive":
        u = e + v
    elif config.endogeneity_sign == "negative":
        u = -(e + v)
    else:  # exogenous: symmetric homoscedastic noise, independent of x
        u = rng.normal(0.0, x_sd, n)
    y = 1.0 + BETA_TRUE * x + 0.5 * w + u
    data = Dataset({"y": y, "x": x, "w": w})
    return data, {"beta_true": BETA_TRUE,
                  "endogeneity_sign": config.endogeneity_sign}


def draw_samples(config: DgpConfig) -> Iterator[tuple[int, int, Dataset]]:
    """Yield (generation, draw, sample) over the nested design.

    Inner draws sample rows without replacement from their generation's
    population; every stream is pre-split so the sequence is deterministic
    and order-independent.
    """
    root = np.random.SeedSequence(config.seed)
    for g, gen_seq in enumerate(root.spawn(config.n_generations)):
        children = gen_seq.spawn(1 + config.n_bootstrap_per_generation)
        population, _ = generate_population(
            config, rng=np.random.default_rng(children[0]))
        for b in range(config.n_bootstrap_per_generation):
            rng = np.random.default_rng(children[1 + b])
            idx = rng.choice(config.population_size, config.sample_size,
                             replace=False)
            yield g, b, population.take(idx)


def _mc_spec(config: DgpConfig, method: str) -> ModelSpec:
    return ModelSpec(outcome="y", endogenous="x", controls=("w",),
                     method=method, sign="auto")


def run_monte_carlo(config: DgpConfig, methods: Sequence[str],
                    threads: int = 1,
                    estimates_csv: str | Path | None = None) -> McSummary:
    """Nested Monte Carlo: generations x draws, each estimated per method.

    Estimates are pooled over all draws; per-replication failures (no
    crossing, ambiguous sign, degenerate resample) are counted per method.
    The summary is invariant to the thread count. With ``estimates_csv`` the
    per-replication estimates are also dumped in long format
    (generation, draw, method, beta_hat; failures as empty cells).
    """
    for m in methods:
        if m not in ("OLS", "SIV", "RSIV_p", "RSIV_n"):
            raise ValueError(f"unsupported method for the benchmark: {m}")

    root = np.random.SeedSequence(config.seed)
    gen_seqs = root.spawn(config.n_generations)

    def run_generation(g: int) -> list[tuple[int, int, str, float | None]]:
        children = gen_seqs[g].spawn(1 + config.n_bootstrap_per_generation)
        population, _ = generate_population(
            config, rng=np.random.default_rng(children[0]))
        out = []
        for b in range(config.n_bootstrap_per_generation):
            rng = np.random.default_rng(children[1 + b])
            idx = rng.choice(config.population_size, config.sample_size,
                             replace=False)
            sample = population.take(idx)
            for m in methods:
                try:
                    est = estimate(sample, _mc_spec(config, m))
                    out.append((g, b, m, est.beta_hat))
                except SivError:
                    out.append((g, b, m, None))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run_generation,
                                   range(config.n_generations)))
    else:
        chunks = [run_generation(g) for g in range(config.n_generations)]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r[0], r[1], methods.index(r[2])))

    if estimates_csv is not None:
        with open(estimates_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "draw", "method", "beta_hat"])
            for g, b, m, beta in records:
                writer.writerow([g, b, m, "" if beta is None else repr(beta)])

    rows = []
    for m in methods:
        betas = np.array([r[3] for r in records if r[2] == m
                          and r[3] is not None], dtype=np.float64)
        n_failed = sum(1 for r in records if r[2] == m and r[3] is None)
        if betas.size == 0:
            rows.append(McRow(m, float("nan"), float("nan"), float("nan"),
                              float("nan"), float("nan"), float("nan"),
                              0, n_failed))
            continue
        mean = float(betas.mean())
        sd = float(betas.std(ddof=1)) if betas.size > 1 else 0.0
        lo, hi = (np.percentile(betas, [2.5, 97.5]) if betas.size > 1
                  else (betas[0], betas[0]))
        bias = mean - BETA_TRUE
        rmse = float(np.sqrt(np.mean((betas - BETA_TRUE) ** 2)))
        rows.append(McRow(m, mean, sd, float(lo), float(hi), bias, rmse,
                          int(betas.size), n_failed))
    return McSummary(rows=tuple(rows), beta_true=BETA_TRUE, config=config)
