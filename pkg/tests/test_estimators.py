import numpy as np
import pytest

from helpers import (
    all_assignments,
    interacted_normal_equations,
    population_beta,
    random_table,
)
from hetfx import (
    AdjustedRIEffects,
    InsufficientDataError,
    MissingColumnError,
    OLSEffects,
    RIEffects,
    RankDeficiencyError,
    arm_residuals,
    fit_ols,
    fit_ri,
)
from hetfx.exceptions import HetfxError
from hetfx.simulate import SimConfig, generate_itt_dataset


def _observe(y1, y0, t):
    return np.where(t == 1, y1, y0)


class TestRIEstimator:
    def test_intercept_only_reduces_to_classic_mean_difference(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(14)
        t = np.array([1] * 6 + [0] * 8)
        est = fit_ri(np.empty((14, 0)), y, t)
        assert est.beta[0] == pytest.approx(y[t == 1].mean() - y[t == 0].mean(), rel=1e-13)
        want = np.var(y[t == 1], ddof=1) / 6 + np.var(y[t == 0], ddof=1) / 8
        assert est.cov[0, 0] == pytest.approx(want, rel=1e-12)

    def test_zero_outcomes(self):
        x = np.random.default_rng(1).standard_normal((10, 2))
        t = np.array([1, 0] * 5)
        est = fit_ri(x, np.zeros(10), t)
        assert np.all(est.beta == 0.0)
        assert np.all(est.cov == 0.0)

    def test_exhaustive_unbiasedness_matches_full_table_coefficient(self):
        rng = np.random.default_rng(2)
        x, design, y1, y0 = random_table(rng, n=6, n_covariates=1)
        truth = population_beta(design, y1 - y0)
        betas = [fit_ri(x, _observe(y1, y0, t), t).beta for t in all_assignments(6, 3)]
        np.testing.assert_allclose(np.mean(betas, axis=0), truth, atol=1e-10)

    def test_conservative_covariance_dominates_truth_under_constant_effect(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 1))
        y0 = rng.standard_normal(6)
        y1 = y0 + 0.7  # constant effect
        betas, covs = [], []
        for t in all_assignments(6, 3):
            est = fit_ri(x, _observe(y1, y0, t), t)
            betas.append(est.beta)
            covs.append(est.cov)
        true_var = np.var(np.array(betas), axis=0, ddof=0)
        expected_cov_diag = np.diag(np.mean(covs, axis=0))
        assert np.all(expected_cov_diag >= true_var - 1e-12)

    def test_no_idiosyncratic_mode_tightens_diagonal(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((40, 2))
        t = np.array([1, 0] * 20)
        y = x @ [0.3, -0.2] + t * (x @ [0.5, 0.1] + 0.4) + rng.standard_normal(40)
        conservative = fit_ri(x, y, t, cov_mode="conservative")
        plug_in = fit_ri(x, y, t, cov_mode="no_idiosyncratic")
        np.testing.assert_array_equal(conservative.beta, plug_in.beta)
        assert np.all(np.diag(plug_in.cov) <= np.diag(conservative.cov) + 1e-15)

    def test_constant_outcome_shift_moves_only_intercept_in_expectation(self):
        # Per-draw, a shift leaks into the non-intercept coordinates through
        # chance covariate imbalance (this estimator does not adjust for it);
        # over all assignments the leakage has mean zero exactly.
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 2))
        y0 = rng.standard_normal(6)
        y1 = y0 + 0.4
        base, shifted = [], []
        for t in all_assignments(6, 3):
            y_obs = _observe(y1, y0, t)
            base.append(fit_ri(x, y_obs, t).beta)
            shifted.append(fit_ri(x, y_obs + 11.0, t).beta)
        np.testing.assert_allclose(
            np.mean(shifted, axis=0)[1:], np.mean(base, axis=0)[1:], atol=1e-10
        )

    def test_duplicated_column_names_offender(self):
        x = np.random.default_rng(6).standard_normal((12, 1))
        doubled = np.column_stack([x, x])
        t = np.array([1, 0] * 6)
        with pytest.raises(RankDeficiencyError, match="x2"):
            fit_ri(doubled, np.zeros(12), t)

    def test_user_supplied_intercept_rejected(self):
        x = np.ones((8, 1))
        with pytest.raises(HetfxError, match="constant"):
            fit_ri(x, np.zeros(8), np.array([1, 0] * 4))

    def test_single_unit_arm_rejected(self):
        x = np.random.default_rng(7).standard_normal((5, 1))
        with pytest.raises(InsufficientDataError):
            fit_ri(x, np.zeros(5), np.array([1, 0, 0, 0, 0]))

    def test_bad_cov_mode(self):
        with pytest.raises(HetfxError):
            fit_ri(np.zeros((4, 0)), np.zeros(4), np.array([1, 1, 0, 0]), cov_mode="exact")


class TestOLSEstimator:
    def test_constant_outcome_shift_leaves_all_slopes_unchanged(self):
        # per-arm regressions absorb a constant shift in their intercepts
        rng = np.random.default_rng(20)
        x = rng.standard_normal((30, 3))
        t = np.array([1, 0] * 15)
        y = rng.standard_normal(30)
        base = fit_ols(x, y, t)
        shifted = fit_ols(x, y + 11.0, t)
        np.testing.assert_allclose(shifted.beta[1:], base.beta[1:], atol=1e-10)
        assert shifted.beta[0] == pytest.approx(base.beta[0], abs=1e-10)

    def test_intercept_only_reduces_to_mean_difference(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal(12)
        t = np.array([1] * 5 + [0] * 7)
        est = fit_ols(np.empty((12, 0)), y, t)
        assert est.beta[0] == pytest.approx(y[t == 1].mean() - y[t == 0].mean(), rel=1e-13)

    def test_matches_interacted_normal_equations(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            x = rng.standard_normal((20, 2))
            t = np.array([1, 0] * 10)
            y = rng.standard_normal(20)
            est = fit_ols(x, y, t)
            design = np.column_stack([np.ones(20), x])
            want = interacted_normal_equations(design, y, t)
            np.testing.assert_allclose(est.beta, want, atol=1e-9)

    def test_armwise_residual_orthogonality(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((25, 2))
        t = np.array([1] * 13 + [0] * 12)
        y = rng.standard_normal(25)
        est = fit_ols(x, y, t)
        for arm in (0, 1):
            resid = est.residuals[t == arm]
            assert abs(resid.mean()) < 1e-10
            design = np.column_stack([np.ones(25), x])[t == arm]
            np.testing.assert_allclose(design.T @ resid, 0.0, atol=1e-9)

    def test_agrees_with_ri_when_arm_moments_balanced(self):
        # mirrored covariates: each arm holds an identical copy of the design
        rng = np.random.default_rng(11)
        half = rng.standard_normal((9, 2))
        x = np.vstack([half, half])
        t = np.array([1] * 9 + [0] * 9)
        y = rng.standard_normal(18)
        np.testing.assert_allclose(
            fit_ols(x, y, t).beta, fit_ri(x, y, t).beta, atol=1e-10
        )

    def test_small_arm_rejected(self):
        x = np.random.default_rng(12).standard_normal((8, 2))
        t = np.array([1, 1, 1, 0, 0, 0, 0, 0])  # n1 = 3 < K + 1 = 4
        with pytest.raises(InsufficientDataError):
            fit_ols(x, np.zeros(8), t)


class TestAdjustedEstimator:
    def test_balanced_adjustment_covariates_reduce_to_ri(self):
        # paired design: both arms see identical adjustment rows
        rng = np.random.default_rng(13)
        half_w = rng.standard_normal((8, 2))
        w = np.vstack([half_w, half_w])
        x = rng.standard_normal((16, 1))
        t = np.array([1] * 8 + [0] * 8)
        y = rng.standard_normal(16)
        adjusted = AdjustedRIEffects().fit(x, y, treatment=t, adjust=w)
        plain = RIEffects().fit(x, y, treatment=t)
        np.testing.assert_allclose(adjusted.beta_, plain.beta_, atol=1e-10)

    def test_zero_cross_moment_reduces_to_ri(self):
        # duplicated units with opposite-signed adjustment values make the
        # within-arm cross moment of w and the scaled outcomes exactly zero
        rng = np.random.default_rng(14)
        base_x = rng.standard_normal((4, 1))
        base_y = rng.standard_normal(4)
        x = np.vstack([base_x, base_x, base_x, base_x])
        y = np.concatenate([base_y, base_y, base_y, base_y])
        w = np.concatenate([np.ones(4), -np.ones(4), np.ones(4), -np.ones(4)])[:, None]
        t = np.array([1] * 8 + [0] * 8)
        adjusted = AdjustedRIEffects().fit(x, y, treatment=t, adjust=w)
        plain = RIEffects().fit(x, y, treatment=t)
        np.testing.assert_allclose(adjusted.beta_, plain.beta_, atol=1e-12)

    def test_missing_adjustment_rejected(self):
        x = np.random.default_rng(15).standard_normal((10, 1))
        with pytest.raises(MissingColumnError):
            AdjustedRIEffects().fit(x, np.zeros(10), treatment=np.array([1, 0] * 5), adjust=None)

    def test_collinear_adjustment_matrix_rejected(self):
        rng = np.random.default_rng(22)
        x = rng.standard_normal((12, 1))
        w_col = rng.standard_normal(12)
        w = np.column_stack([w_col, 2.0 * w_col])
        with pytest.raises(RankDeficiencyError, match="adjustment"):
            AdjustedRIEffects().fit(
                x, rng.standard_normal(12), treatment=np.array([1, 0] * 6), adjust=w
            )

    def test_adjustment_shrinks_sampling_variance(self):
        # strong auxiliary predictor: the adjusted estimator should have
        # clearly smaller dispersion across replications
        config = SimConfig(scenario="b", n=800, reps=400, seed=99)
        plain_betas, adjusted_betas = [], []
        for rep in range(config.reps):
            ds, _ = generate_itt_dataset(config, rep)
            plain_betas.append(RIEffects().fit(ds.covariates, ds.y, treatment=ds.t).beta_)
            adjusted_betas.append(
                AdjustedRIEffects()
                .fit(ds.covariates, ds.y, treatment=ds.t, adjust=ds.w)
                .beta_
            )
        plain_var = np.var(np.array(plain_betas), axis=0).sum()
        adjusted_var = np.var(np.array(adjusted_betas), axis=0).sum()
        assert adjusted_var <= plain_var


class TestArmResiduals:
    def test_perfect_fit_gives_zeros(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((10, 2))
        design = np.column_stack([np.ones(10), x])
        g1 = np.array([1.0, 2.0, -1.0])
        g0 = np.array([0.5, 0.0, 1.0])
        t = np.array([1, 0] * 5)
        y = np.where(t == 1, design @ g1, design @ g0)
        np.testing.assert_allclose(arm_residuals(x, y, t, g1, g0), 0.0, atol=1e-12)

    def test_zero_coefficients_return_outcomes(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((8, 1))
        y = rng.standard_normal(8)
        t = np.array([1, 0] * 4)
        np.testing.assert_array_equal(arm_residuals(x, y, t, np.zeros(2), np.zeros(2)), y)

    def test_dimension_mismatch(self):
        with pytest.raises(HetfxError):
            arm_residuals(np.zeros((4, 1)), np.zeros(4), np.array([1, 1, 0, 0]), np.zeros(3), np.zeros(2))


class TestWaldInvariance:
    def test_statistic_invariant_under_affine_reparameterization(self):
        from hetfx import omnibus_test

        rng = np.random.default_rng(18)
        x = rng.standard_normal((60, 3))
        t = np.array([1, 0] * 30)
        y = x @ [0.4, -0.3, 0.2] + t * (0.3 + x @ [0.25, 0.0, -0.15]) + rng.standard_normal(60)
        transform = np.array([[2.0, 0.3, 0.0], [0.0, -1.5, 0.7], [0.1, 0.0, 1.1]])
        shift = np.array([3.0, -1.0, 0.5])
        x_reparam = x @ transform.T + shift
        for fitter in (fit_ri, fit_ols):
            base = omnibus_test(fitter(x, y, t))
            reparam = omnibus_test(fitter(x_reparam, y, t))
            assert reparam.statistic == pytest.approx(base.statistic, rel=1e-8)


class TestCovarianceShape:
    def test_conservative_covariances_are_symmetric_psd(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((60, 3))
        t = np.array([1, 0] * 30)
        y = x @ [0.2, -0.1, 0.4] + t * (0.3 + x @ [0.1, 0.2, 0.0]) + rng.standard_normal(60)
        w = np.column_stack([x, rng.standard_normal(60)])
        estimates = [
            fit_ri(x, y, t),
            fit_ols(x, y, t),
            AdjustedRIEffects().fit(x, y, treatment=t, adjust=w).estimate_,
        ]
        for est in estimates:
            assert np.array_equal(est.cov, est.cov.T)
            eigenvalues = np.linalg.eigvalsh(est.cov)
            assert eigenvalues.min() >= -1e-10 * max(np.trace(est.cov), 1.0)


class TestSklearnProtocol:
    def test_get_params_and_clone(self):
        from sklearn.base import clone

        est = RIEffects(cov_mode="no_idiosyncratic")
        assert est.get_params() == {"cov_mode": "no_idiosyncratic"}
        cloned = clone(est)
        assert cloned.cov_mode == "no_idiosyncratic"

    def test_fit_returns_self_with_attributes(self):
        rng = np.random.default_rng(19)
        x = rng.standard_normal((12, 1))
        t = np.array([1, 0] * 6)
        fitted = OLSEffects().fit(x, rng.standard_normal(12), treatment=t)
        assert fitted.beta_.shape == (2,)
        assert fitted.cov_.shape == (2, 2)
        assert fitted.estimate_.method == "OLS"
        assert fitted.n_features_in_ == 1
