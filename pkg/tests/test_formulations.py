"""Schedules, targets, samplers, density, SNR, and the velocity loss."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from ditscale.errors import ConfigError, SingularTimestepError
from ditscale.formulations import (DDPM, LDM, LogitNormalSampler,
                                   PredictionType, RectifiedFlow,
                                   UniformSampler, VariancePreserving, coeffs,
                                   ln_density, make_noisy, rf_loss,
                                   sample_timestep, schedule_from_dict, snr,
                                   snr_prime_rf, target, v_to_x0)


class TestCoeffs:
    def test_rf_midpoint(self):
        c = coeffs(RectifiedFlow(), 0.3)
        assert c.alpha == pytest.approx(0.7)
        assert c.beta == pytest.approx(0.3)
        assert c.alpha_prime == -1.0
        assert c.beta_prime == 1.0

    def test_rf_clean_endpoint(self):
        c = coeffs(RectifiedFlow(), 0.0)
        assert c.alpha == 1.0
        assert c.beta == 0.0

    def test_vp_closed_form(self):
        # alpha = exp(-sigma t / 2), beta = sqrt(1 - exp(-sigma t))
        c = coeffs(VariancePreserving(sigma=1.0), 0.5)
        assert c.alpha == pytest.approx(math.exp(-0.25), abs=1e-12)
        assert c.beta == pytest.approx(math.sqrt(1 - math.exp(-0.5)), abs=1e-12)

    def test_vp_derivatives_match_finite_differences(self):
        sched = VariancePreserving(sigma=1.3)
        h = 1e-6
        for t in (0.2, 0.5, 0.9):
            c = coeffs(sched, t)
            lo, hi = coeffs(sched, t - h), coeffs(sched, t + h)
            assert c.alpha_prime == pytest.approx((hi.alpha - lo.alpha) / (2 * h), rel=1e-6)
            assert c.beta_prime == pytest.approx((hi.beta - lo.beta) / (2 * h), rel=1e-6)

    @pytest.mark.parametrize("sched", [
        DDPM(1e-4, 0.02, 1000),
        LDM(0.00085, 0.012, 1000),
        VariancePreserving(sigma=2.0),
    ])
    def test_variance_preserving_grid(self, sched):
        # alpha^2 + beta^2 = 1 on a 1000-point grid
        alpha, beta, _, _ = sched.coeffs_arrays(np.linspace(0.0, 1.0, 1000))
        assert np.max(np.abs(alpha**2 + beta**2 - 1.0)) < 1e-9

    def test_discrete_rounding(self):
        sched = DDPM(1e-4, 0.02, 1000)
        # t maps to index round(t * 999): both of these hit index 500
        a1 = coeffs(sched, 500.0 / 999.0).alpha
        a2 = coeffs(sched, 500.4 / 999.0).alpha
        assert a1 == a2

    def test_out_of_range_t(self):
        with pytest.raises(ConfigError):
            coeffs(RectifiedFlow(), 1.5)

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            DDPM(0.5, 0.1, 1000)  # sigma0 > sigmaT
        with pytest.raises(ConfigError):
            VariancePreserving(sigma=-1.0)
        with pytest.raises(ConfigError):
            DDPM(1e-4, 0.02, 0)

    def test_from_dict(self):
        assert isinstance(schedule_from_dict("rf"), RectifiedFlow)
        sched = schedule_from_dict({"kind": "vp", "sigma": 2.0})
        assert sched.sigma == 2.0
        with pytest.raises(ConfigError):
            schedule_from_dict({"kind": "nope"})


class TestMakeNoisy:
    def test_rf_combination(self):
        c = coeffs(RectifiedFlow(), 0.3)
        out = make_noisy(np.array([1.0, 0.0]), np.array([0.0, 1.0]), c)
        assert out == pytest.approx([0.7, 0.3])

    def test_identity_at_zero(self):
        c = coeffs(RectifiedFlow(), 0.0)
        x0 = np.array([2.5, -1.25])
        assert make_noisy(x0, np.array([9.0, 9.0]), c) == pytest.approx(x0)

    def test_hand_arithmetic(self):
        c = coeffs(RectifiedFlow(), 0.5)
        out = make_noisy(np.array([2.0, -2.0]), np.array([1.0, 1.0]), c)
        assert out == pytest.approx([1.5, -0.5])

    def test_dimension_mismatch(self):
        c = coeffs(RectifiedFlow(), 0.5)
        with pytest.raises(ConfigError):
            make_noisy(np.zeros(2), np.zeros(3), c)


class TestTarget:
    def test_velocity_rf(self):
        c = coeffs(RectifiedFlow(), 0.3)
        out = target(PredictionType.VELOCITY, np.array([1.0, 0.0]),
                     np.array([0.0, 1.0]), c)
        assert out == pytest.approx([-1.0, 1.0])

    def test_score(self):
        c = coeffs(RectifiedFlow(), 0.5)
        out = target(PredictionType.SCORE, np.zeros(2), np.array([1.0, -1.0]), c)
        assert out == pytest.approx([-2.0, 2.0])

    def test_epsilon_identity(self):
        c = coeffs(RectifiedFlow(), 0.7)
        eps = np.array([0.3, -1.2])
        assert target(PredictionType.EPSILON, np.zeros(2), eps, c) == pytest.approx(eps)

    def test_score_singular_at_clean_endpoint(self):
        c = coeffs(RectifiedFlow(), 0.0)
        with pytest.raises(SingularTimestepError):
            target(PredictionType.SCORE, np.zeros(2), np.ones(2), c)


class TestRfLoss:
    def test_perfect_prediction(self):
        x0 = np.array([1.0, 2.0])
        eps = np.array([0.5, -0.5])
        assert rf_loss(eps - x0, x0, eps) == 0.0

    def test_arithmetic(self):
        assert rf_loss(np.zeros(2), np.array([1.0, 0.0]),
                       np.array([0.0, 1.0])) == pytest.approx(2.0)

    def test_hand_value(self):
        assert rf_loss(np.array([-0.5, 0.5]), np.array([1.0, 0.0]),
                       np.array([0.0, 1.0])) == pytest.approx(0.5)

    def test_batch_mean(self):
        x0 = np.array([[1.0, 0.0], [1.0, 0.0]])
        eps = np.array([[0.0, 1.0], [0.0, 1.0]])
        v = np.array([[0.0, 0.0], [-1.0, 1.0]])
        assert rf_loss(v, x0, eps) == pytest.approx(1.0)  # (2 + 0) / 2

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        v, x0, eps = rng.standard_normal((3, 8, 5))
        perm = rng.permutation(5)
        assert rf_loss(v[:, perm], x0[:, perm], eps[:, perm]) == \
            pytest.approx(rf_loss(v, x0, eps), rel=1e-12)

    def test_zero_iff_true_velocity(self):
        rng = np.random.default_rng(4)
        x0, eps = rng.standard_normal((2, 6, 2))
        assert rf_loss(eps - x0, x0, eps) == pytest.approx(0.0, abs=1e-30)
        off = eps - x0
        off[0, 0] += 1e-3
        assert rf_loss(off, x0, eps) > 1e-9


class TestTimestepSampler:
    def test_logistic_of_zero(self):
        class FixedRng:
            def normal(self, m, s, n=None):
                return 0.0
        assert sample_timestep(LogitNormalSampler(0, 1), FixedRng()) == 0.5

    def test_logistic_of_log3(self):
        class FixedRng:
            def normal(self, m, s, n=None):
                return math.log(3.0)
        assert sample_timestep(LogitNormalSampler(0, 1), FixedRng()) == \
            pytest.approx(0.75, abs=1e-12)

    def test_uniform_mean(self):
        rng = np.random.default_rng(11)
        draws = UniformSampler().sample(rng, 100_000)
        assert draws.mean() == pytest.approx(0.5, abs=0.01)

    def test_open_interval(self):
        rng = np.random.default_rng(12)
        draws = LogitNormalSampler(0.0, 3.0).sample(rng, 50_000)
        assert np.all(draws > 0.0) and np.all(draws < 1.0)

    def test_invalid_scale(self):
        with pytest.raises(ConfigError):
            LogitNormalSampler(0.0, 0.0)


class TestLnDensity:
    def test_value_at_half(self):
        assert ln_density(0.5, 0.0, 1.0) == pytest.approx(4.0 / math.sqrt(2 * math.pi),
                                                          rel=1e-12)

    def test_symmetry(self):
        for t in (0.1, 0.25, 0.4):
            assert ln_density(t, 0.0, 1.0) == pytest.approx(ln_density(1 - t, 0.0, 1.0),
                                                            rel=1e-12)

    def test_integrates_to_one(self):
        total, err = quad(lambda t: ln_density(t, 0.0, 1.0), 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_integrates_to_one_shifted(self):
        total, _ = quad(lambda t: ln_density(t, 0.5, 0.7), 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_domain(self):
        with pytest.raises(ConfigError):
            ln_density(0.0, 0.0, 1.0)
        with pytest.raises(ConfigError):
            ln_density(1.0, 0.0, 1.0)

    def test_histogram_matches_density(self):
        # bin probabilities of 1e6 draws vs the exact bin mass (difference of
        # normal CDFs in logit space), 100 bins
        rng = np.random.default_rng(123)
        draws = LogitNormalSampler(0.0, 1.0).sample(rng, 1_000_000)
        edges = np.linspace(0.0, 1.0, 101)
        counts, _ = np.histogram(draws, bins=edges)
        frac = counts / draws.size
        inner = edges[1:-1]
        cdf = np.concatenate([[0.0], norm.cdf(np.log(inner / (1 - inner))), [1.0]])
        exact = np.diff(cdf)
        assert np.max(np.abs(frac - exact)) < 0.02


class TestSnr:
    def test_rf_midpoint(self):
        assert snr(coeffs(RectifiedFlow(), 0.5)) == pytest.approx(1.0)

    def test_prime_closed_form(self):
        assert snr_prime_rf(0.5) == pytest.approx(-8.0)

    def test_prime_negative_everywhere(self):
        t = np.linspace(0.01, 0.99, 199)
        assert np.all(snr_prime_rf(t) < 0.0)

    def test_prime_matches_finite_differences(self):
        sched = RectifiedFlow()
        h = 1e-7
        for t in np.linspace(0.05, 0.95, 19):
            fd = (snr(coeffs(sched, t + h)) - snr(coeffs(sched, t - h))) / (2 * h)
            assert snr_prime_rf(t) == pytest.approx(fd, rel=1e-6)

    def test_singular_at_zero(self):
        with pytest.raises(SingularTimestepError):
            snr(coeffs(RectifiedFlow(), 0.0))


class TestVToX0:
    def test_inverts_make_noisy(self):
        out = v_to_x0(np.array([0.7, 0.3]), np.array([-1.0, 1.0]), 0.3)
        assert out == pytest.approx([1.0, 0.0])

    def test_identity_at_zero(self):
        x = np.array([0.2, 0.4])
        assert v_to_x0(x, np.array([5.0, 5.0]), 0.0) == pytest.approx(x)

    def test_hand_arithmetic(self):
        out = v_to_x0(np.array([1.5, -0.5]), np.array([-1.0, 3.0]), 0.5)
        assert out == pytest.approx([2.0, -2.0])

    def test_round_trip_property(self):
        rng = np.random.default_rng(5)
        sched = RectifiedFlow()
        for t in rng.random(50):
            c = coeffs(sched, float(t))
            x0 = rng.standard_normal(2)
            eps = rng.standard_normal(2)
            x_t = make_noisy(x0, eps, c)
            v = target(PredictionType.VELOCITY, x0, eps, c)
            assert np.max(np.abs(v_to_x0(x_t, v, float(t)) - x0)) < 1e-12
