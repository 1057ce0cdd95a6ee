"""Robust criteria: chi-square CDF, BP statistic, AD statistic, loci."""

import math

import numpy as np
import pytest

from sivreg import (
    AdInput,
    DegenerateVarianceError,
    DgpConfig,
    GridConfig,
    ad_two_sample,
    build_context,
    candidate,
    chi2_cdf,
    chi_square_stat,
    draw_samples,
    dt_moment,
    find_delta0,
    parametric_distance,
    robust_delta0,
    scan_locus,
)
from sivreg.linalg import VarianceModel, fgls, ols
from sivreg.robust import _first_stage_pair


def chi2_cdf_series_oracle(x, terms=300):
    """Independent oracle: P(chi2(1) < x) by the plain power series of the
    lower incomplete gamma at a=1/2."""
    if x <= 0:
        return 0.0
    a = 0.5
    z = x / 2.0
    total = 0.0
    term = 1.0 / a
    for k in range(terms):
        if k > 0:
            term *= z / (a + k)
        total += term
    return total * math.exp(-z + a * math.log(z) - math.lgamma(a))


class TestChi2Cdf:
    def test_erf_identity_grid(self):
        # P(chi2(1) < x) = erf(sqrt(x/2)) exactly
        for x in np.linspace(0.05, 25.0, 50):
            assert abs(chi2_cdf(float(x)) - math.erf(math.sqrt(x / 2.0))) < 1e-12

    def test_series_oracle_grid(self):
        for x in np.linspace(0.1, 12.0, 50):
            assert abs(chi2_cdf(float(x)) - chi2_cdf_series_oracle(float(x))) < 1e-10

    def test_95th_percentile(self):
        assert abs(chi2_cdf(3.841458820694124) - 0.95) < 1e-3
        assert abs(chi2_cdf(3.841) - 0.95) < 1e-3

    def test_bounds_and_monotone(self):
        xs = np.linspace(0.0, 40.0, 200)
        vals = [chi2_cdf(float(x)) for x in xs]
        assert vals[0] == 0.0
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_general_df(self):
        # chi2(2) has cdf 1 - exp(-x/2)
        for x in (0.5, 1.0, 3.0, 8.0):
            assert abs(chi2_cdf(x, df=2) - (1.0 - math.exp(-x / 2.0))) < 1e-12


class TestChiSquareStat:
    def test_constant_squared_residuals_zero(self):
        assert chi_square_stat(np.full(6, 2.0), np.arange(6.0)) == 0.0

    def test_planted_four_point_fixture(self):
        # e2=(1,2,3,4) on z=(1,2,3,4): perfect fit, SSR = 5, SSE = 10
        # statistic = (5/2) / (10/4)^2 = 0.4
        e2 = np.array([1.0, 2.0, 3.0, 4.0])
        z = np.array([1.0, 2.0, 3.0, 4.0])
        assert abs(chi_square_stat(e2, z) - 0.4) < 1e-12

    def test_residual_scale_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(10, 60))
            z = rng.normal(size=n)
            e2 = rng.uniform(0.1, 3.0, size=n)
            a = chi_square_stat(e2, z)
            b = chi_square_stat(2.0 * e2, z)
            assert abs(a - b) <= 1e-10 * max(a, 1.0)

    def test_degenerate_regressor(self):
        with pytest.raises(DegenerateVarianceError):
            chi_square_stat(np.arange(1.0, 6.0), np.ones(5))


class TestAdTwoSample:
    def test_identical_multisets_zero(self):
        f = np.array([0.4, 1.0, 2.0, 2.0, 5.0])
        assert ad_two_sample(AdInput(f, f.copy())) == 0.0

    def test_hand_enumerated_fixture(self):
        # f={1,2}, g={3,4}: terms at 1,2,3 (4 excluded, H=1):
        # (0.5^2)/(0.25*0.75) + 1/(0.5*0.5) + (0.5^2)/(0.75*0.25)
        # = 4/3 + 4 + 4/3 = 20/3; x nm/(n+m)^2 = 4/16 -> 5/3
        got = ad_two_sample(AdInput(np.array([1.0, 2.0]),
                                    np.array([3.0, 4.0])))
        assert abs(got - 5.0 / 3.0) < 1e-12

    def test_symmetry_zero_and_monotone_invariance(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            m = int(rng.integers(2, 40))
            f = rng.uniform(0.0, 4.0, size=n)
            g = rng.uniform(0.0, 4.0, size=m)
            a = ad_two_sample(AdInput(f, g))
            assert a >= 0.0
            assert ad_two_sample(AdInput(g, f)) == a
            # common strictly increasing transform leaves the statistic fixed
            t = lambda v: np.expm1(v) + 2.0 * v
            assert abs(ad_two_sample(AdInput(t(f), t(g))) - a) < 1e-10

    def test_ties_handled(self):
        f = np.array([1.0, 1.0, 2.0])
        g = np.array([1.0, 3.0])
        a = ad_two_sample(AdInput(f, g))
        assert np.isfinite(a) and a >= 0.0


def dgp_context(seed=1, variant=False, sign="positive"):
    cfg = DgpConfig(population_size=20000, sample_size=1000,
                    n_generations=1, n_bootstrap_per_generation=1,
                    seed=seed, endogeneity_sign=sign,
                    heteroscedastic_variant=variant)
    _, _, sample = next(iter(draw_samples(cfg)))
    return build_context(sample, "y", "x", ["w"])


class TestParametricDistance:
    def test_equal_stats_give_zero(self):
        # unit FGLS weights make OLS and FGLS residuals bitwise identical,
        # so both statistics and the distance are exactly zero apart
        rng = np.random.default_rng(21)
        x = rng.normal(size=60)
        s = x + rng.normal(size=60)
        vm = VarianceModel(intercept_b=1.0, slope_coeffs=np.zeros(1),
                           fitted_variances=np.ones(60), floor=1e-8)
        fit_o = ols(s, x)
        fit_g = fgls(s, x, vm)
        assert (fit_o.residuals == fit_g.residuals).all()
        x2 = chi_square_stat(fit_o.residuals**2, s)
        x2g = chi_square_stat(fit_g.residuals**2, s)
        assert chi2_cdf(x2) - chi2_cdf(x2g) == 0.0

    def test_known_probability_difference(self):
        # X2 at the chi2(1) 95% point vs X2_g = 0 gives ~0.95
        assert abs((chi2_cdf(3.841458820694124) - chi2_cdf(0.0)) - 0.95) < 1e-3

    def test_bounded_in_unit_interval(self):
        ctx = dgp_context(seed=4)
        for delta in (0.05, 0.3, 0.8, 2.0, 6.0):
            point = parametric_distance(ctx, -1, delta)
            assert -1.0 <= point.distance <= 1.0
            assert point.x2_ols >= 0.0 and point.x2_fgls >= 0.0

    def test_ratio_form_exposed(self):
        ctx = dgp_context(seed=4)
        point = parametric_distance(ctx, -1, 0.5, ratio=True)
        assert point.distance >= 0.0

    def test_dgp_minimum_near_crossing(self):
        # the |D| argmin sits within one grid step of the dt crossing
        checked = 0
        for seed in (6, 7, 8, 9, 10):
            cfg = DgpConfig(population_size=20000, sample_size=1000,
                            n_generations=1, n_bootstrap_per_generation=1,
                            seed=seed)
            _, _, sample = next(iter(draw_samples(cfg)))
            ctx = build_context(sample, "y", "x", ["w"])
            grid = GridConfig(n_points=100)
            locus = scan_locus(ctx, -1, grid)
            zero = find_delta0(locus, criterion=lambda d: dt_moment(
                ctx, candidate(ctx, -1, d)), grid=grid)
            if zero is None:
                continue
            res = robust_delta0(ctx, -1, grid, mode="parametric")
            assert res is not None
            d0p = res[0].delta0
            step = np.diff(np.log(locus.deltas)).max()
            assert abs(np.log(d0p) - np.log(zero.delta0)) < 2.0 * step
            checked += 1
        assert checked >= 3


class TestRobustDelta0:
    def test_planted_convex_argmin(self):
        # golden refinement converges to a planted interior minimum
        ctx = dgp_context(seed=9)
        res = robust_delta0(ctx, -1, GridConfig(n_points=60),
                            mode="nonparametric")
        assert res is not None
        zero, locus = res
        assert locus.criterion_kind == "robust_nonparametric"
        assert (locus.criterion >= 0.0).all()
        assert zero.bracket[0] <= zero.delta0 <= zero.bracket[1]

    def test_heteroscedastic_variant_in_range(self):
        ctx = dgp_context(seed=2, variant=True)
        for mode in ("parametric", "nonparametric"):
            res = robust_delta0(ctx, -1, GridConfig(n_points=120), mode=mode)
            assert res is not None
            assert 0.2 < res[0].delta0 < 1.5

    def test_grid_refinement_stability(self):
        ctx = dgp_context(seed=3, variant=True)
        d0s = {}
        for n_points in (100, 200):
            res = robust_delta0(ctx, -1,
                                GridConfig(n_points=n_points,
                                           refine_rounds=0),
                                mode="nonparametric")
            assert res is not None
            d0s[n_points] = res[0].delta0
        coarse = np.geomspace(1e-3, 9.95, 100)
        spacing = np.diff(coarse)[np.searchsorted(coarse, d0s[100]) - 1]
        assert abs(d0s[200] - d0s[100]) < spacing

    def test_locus_csv_schema(self, tmp_path):
        ctx = dgp_context(seed=9)
        res = robust_delta0(ctx, -1, GridConfig(n_points=30),
                            mode="parametric")
        assert res is not None
        path = tmp_path / "locus.csv"
        res[1].to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "delta,criterion,corr_s_x,first_stage_F"


class TestTraceDiscrepancy:
    def test_diagnostic_nonnegative_and_finite(self):
        from sivreg import trace_discrepancy

        ctx = dgp_context(seed=9)
        for delta in (0.1, 0.6, 2.0):
            val = trace_discrepancy(ctx, -1, delta)
            assert np.isfinite(val) and val >= 0.0


class TestFirstStagePair:
    def test_variance_model_regresses_on_instrument(self):
        ctx = dgp_context(seed=9)
        s = candidate(ctx, -1, 0.7)
        fit_o, fit_g, vm = _first_stage_pair(ctx, s)
        assert vm.fitted_variances.shape == (ctx.n,)
        assert (vm.fitted_variances >= vm.floor).all()
        np.testing.assert_allclose(fit_o.residuals + fit_o.fitted, ctx.x,
                                   atol=1e-10)
        np.testing.assert_allclose(fit_g.residuals + fit_g.fitted, ctx.x,
                                   atol=1e-10)
