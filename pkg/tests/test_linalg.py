"""regression primitives: OLS, partialling, FGLS, F stats, variance model."""

import numpy as np
import pytest

from sivreg import (
    DegenerateVarianceError,
    RankDeficientError,
    TooFewRowsError,
    estimate_variance_model,
    fgls,
    first_stage_F,
    ols,
    partial_out,
)
from sivreg.linalg import F_CAP, VarianceModel


def brute_force_ols(X, y):
    """Independent oracle: explicit (X'X)^-1 X'y."""
    return np.linalg.inv(X.T @ X) @ (X.T @ y)


class TestPartialOut:
    def test_intercept_only_demeans(self):
        out = partial_out(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [-1.0, 0.0, 1.0], atol=1e-12)

    def test_projection_of_spanned_target_is_zero(self):
        z = np.array([1.0, 2.0, 4.0, 8.0])
        target = 3.0 - 2.0 * z
        out = partial_out(target, z)
        assert np.linalg.norm(out) < 1e-10

    def test_hand_normal_equations_oracle(self):
        # controls (1,2,4) with intercept; target (2,3,9); solved by hand:
        # X'X = [[3,7],[7,21]], X'y = [14,44] -> b = (-1, 17/7)
        z = np.array([1.0, 2.0, 4.0])
        t = np.array([2.0, 3.0, 9.0])
        expected = t - (-1.0 + (17.0 / 7.0) * z)
        np.testing.assert_allclose(partial_out(t, z), expected, atol=1e-12)
        np.testing.assert_allclose(expected, [4 / 7, -6 / 7, 2 / 7],
                                   atol=1e-12)

    def test_idempotence_and_orthogonality(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            V = rng.normal(size=(40, 3))
            t = rng.normal(size=40)
            r1 = partial_out(t, V)
            r2 = partial_out(r1, V)
            np.testing.assert_allclose(r1, r2, atol=1e-10)
            for j in range(3):
                inner = abs(r1 @ V[:, j])
                assert inner <= 1e-8 * np.linalg.norm(r1) * np.linalg.norm(V[:, j])
            assert abs(r1.sum()) <= 1e-8 * 40 * np.abs(t).max()

    def test_rank_deficient_controls(self):
        V = np.column_stack([np.ones(6), np.ones(6) * 2.0])
        with pytest.raises(RankDeficientError):
            partial_out(np.arange(6.0), V)


class TestOls:
    def test_exact_fit(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        fit = ols(x, 2.0 * x)
        assert abs(fit.coefficients[1] - 2.0) < 1e-12
        assert fit.sse < 1e-20

    def test_constant_outcome(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.full(4, 5.0)
        fit = ols(x, y)
        assert abs(fit.coefficients[1]) < 1e-12
        assert abs(fit.coefficients[0] - 5.0) < 1e-12

    def test_four_point_brute_force_oracle(self):
        x = np.array([0.3, 1.1, 2.4, 3.9])
        y = np.array([1.0, 0.2, 3.3, 2.8])
        fit = ols(x, y)
        X = np.column_stack([np.ones(4), x])
        np.testing.assert_allclose(fit.coefficients, brute_force_ols(X, y),
                                   rtol=1e-8)

    def test_residual_decomposition(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        fit = ols(X, y)
        np.testing.assert_allclose(fit.residuals + fit.fitted, y, atol=1e-12)
        assert abs(fit.sse - fit.residuals @ fit.residuals) < 1e-12
        assert fit.dof == 30 - 5

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(25, 3))
        y = rng.normal(size=25)
        a = ols(X, y)
        b = ols(X, y)
        assert (a.coefficients == b.coefficients).all()
        assert (a.residuals == b.residuals).all()

    def test_too_few_rows(self):
        with pytest.raises(TooFewRowsError):
            ols(np.array([[1.0, 2.0]]), np.array([1.0]))

    def test_rank_deficient(self):
        X = np.column_stack([np.arange(8.0), 2.0 * np.arange(8.0)])
        with pytest.raises(RankDeficientError):
            ols(X, np.random.default_rng(0).normal(size=8))

    def test_fwl_identity_random_designs(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            X = rng.normal(size=(30, 4))
            y = rng.normal(size=30)
            joint = ols(X, y)
            xr = partial_out(X[:, 0], X[:, 1:])
            yr = partial_out(y, X[:, 1:])
            slope = (xr @ yr) / (xr @ xr)
            assert abs(slope - joint.coefficients[1]) <= 1e-8 * max(
                abs(joint.coefficients[1]), 1.0)


class TestFgls:
    @staticmethod
    def unit_model(n):
        return VarianceModel(intercept_b=1.0, slope_coeffs=np.zeros(1),
                             fitted_variances=np.ones(n), floor=1e-8)

    def test_unit_weights_equal_ols(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=40)
        y = 1.0 + 0.5 * x + rng.normal(size=40)
        a = ols(x, y)
        b = fgls(x, y, self.unit_model(40))
        np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-10)

    def test_scale_invariance_of_constant_weights(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=40)
        y = 1.0 + 0.5 * x + rng.normal(size=40)
        vm = VarianceModel(intercept_b=3.0, slope_coeffs=np.zeros(1),
                           fitted_variances=np.full(40, 3.0), floor=1e-8)
        a = ols(x, y)
        b = fgls(x, y, vm)
        np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-10)

    def test_two_block_weighted_normal_equations_oracle(self):
        # variances 1 for the first block, 4 for the second
        rng = np.random.default_rng(7)
        x = rng.normal(size=20)
        y = 2.0 - 1.5 * x + rng.normal(size=20)
        var = np.where(np.arange(20) < 10, 1.0, 4.0)
        vm = VarianceModel(intercept_b=0.0, slope_coeffs=np.zeros(1),
                           fitted_variances=var, floor=1e-8)
        fit = fgls(x, y, vm)
        W = np.diag(1.0 / var)
        X = np.column_stack([np.ones(20), x])
        oracle = np.linalg.inv(X.T @ W @ X) @ (X.T @ W @ y)
        np.testing.assert_allclose(fit.coefficients, oracle, rtol=1e-10)
        np.testing.assert_allclose(fit.residuals + fit.fitted, y, atol=1e-12)


class TestFirstStageF:
    def test_uncorrelated_instrument_near_one(self):
        rng = np.random.default_rng(8)
        n = 4000
        x = rng.normal(size=n)
        z = rng.normal(size=n)
        f = first_stage_F(ols(z, x))
        assert f < 10.0  # weak
        assert 0.0 <= f < 8.0

    def test_instrument_equals_regressor_capped(self):
        x = np.random.default_rng(9).normal(size=50)
        f = first_stage_F(ols(x, x))
        assert f == F_CAP

    def test_twenty_row_restricted_vs_full_oracle(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=20)
        z = 0.6 * x + rng.normal(size=20)
        fit = ols(z, x)
        f = first_stage_F(fit)
        sse_full = fit.sse
        sse_restricted = float(((x - x.mean()) ** 2).sum())
        oracle = ((sse_restricted - sse_full) / 1.0) / (sse_full / (20 - 2))
        assert abs(f - oracle) <= 1e-8 * oracle

    def test_degenerate_outcome(self):
        z = np.arange(10.0)
        with pytest.raises(DegenerateVarianceError):
            first_stage_F(ols(z, np.zeros(10)))


class TestEstimateVarianceModel:
    def test_constant_residuals(self):
        z = np.arange(8.0)
        vm = estimate_variance_model(np.full(8, 3.0), z)
        np.testing.assert_allclose(vm.fitted_variances, 3.0, atol=1e-10)
        np.testing.assert_allclose(vm.slope_coeffs, 0.0, atol=1e-10)

    def test_exact_line_interpolated(self):
        z = np.arange(1.0, 9.0)
        e2 = 0.5 + 0.25 * z
        vm = estimate_variance_model(e2, z)
        np.testing.assert_allclose(vm.fitted_variances, e2, atol=1e-10)

    def test_negative_prediction_clamped_to_floor(self):
        # the OLS line predicts a negative value at the first row only
        z = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        e2 = np.array([0.05, 0.10, 1.5, 2.5, 5.0])
        line = ols(z, e2)
        assert line.fitted[0] < 0  # fixture constructed to clamp row 0
        assert (line.fitted[1:] > 0).all()
        vm = estimate_variance_model(e2, z)
        floor = max(1e-8, 1e-6 * e2.mean())
        assert vm.fitted_variances[0] == floor
        np.testing.assert_allclose(vm.fitted_variances[1:], line.fitted[1:],
                                   atol=1e-12)
