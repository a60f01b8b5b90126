"""Evaluation metrics: validation loss, VLB, exact likelihood, sampling, FD."""

import math

import numpy as np
import pytest

from ditscale.datagen import default_in_domain
from ditscale.errors import ConfigError, NumericalError
from ditscale.evalkit import (EvalConfig, divergence, euler_sample,
                              euler_sample_field, evaluate, exact_nll,
                              frechet_distance, nll_via_ode, offset_vlb,
                              val_loss)
from ditscale.formulations import LogitNormalSampler
from ditscale.netcore import ModelConfig, ParamSet, init, param_count
from ditscale.trainer import TrainConfig, train


def gaussian_marginal_field(x, t):
    """Closed-form marginal velocity of standard-normal data under the
    straight-line interpolation: v(x, t) = ((2t-1)/((1-t)^2+t^2)) x.
    Returns (velocity, divergence)."""
    s = (1.0 - t) ** 2 + t**2
    a = (2.0 * t - 1.0) / s
    return a * x, np.full(x.shape[0], a * x.shape[1])


def zero_params(cfg=None):
    cfg = cfg or ModelConfig(depth=2, width=8)
    return ParamSet(cfg, np.zeros(param_count(cfg)))


@pytest.fixture(scope="module")
def trained():
    """A small model trained on the default mixture, with checkpoints."""
    cfg = TrainConfig(budget_flops=2.5e9, model=ModelConfig(depth=2, width=24),
                      batch_size=128, seed=11)
    record, params, snaps = train(cfg, "eval-fixture", snapshot_at=(0, 200))
    return cfg, record, params, snaps


class TestValLoss:
    def test_zero_model_matches_analytic(self):
        # zero network outputs 0, so the loss is E||x0 - eps||^2 =
        # E||x0||^2 + dim = 8.5 + 2 on the default mixture
        spec = default_in_domain()
        rng = np.random.default_rng(0)
        eval_set = spec.sample(4000, rng)
        mean, stderr = val_loss(zero_params(), eval_set, LogitNormalSampler(),
                                EvalConfig(n_points=2000, timesteps_per_point=60))
        assert mean == pytest.approx(spec.second_moment() + 2.0, abs=5 * stderr + 0.1)

    def test_deterministic(self):
        spec = default_in_domain()
        eval_set = spec.sample(500, np.random.default_rng(1))
        cfgs = EvalConfig(n_points=200, timesteps_per_point=10, seed=5)
        p = zero_params()
        a = val_loss(p, eval_set, LogitNormalSampler(), cfgs)
        b = val_loss(p, eval_set, LogitNormalSampler(), cfgs)
        assert a == b

    def test_trained_beats_zero_model(self, trained):
        cfg, _, params, _ = trained
        eval_set = cfg.dataset.sample(1000, np.random.default_rng(2))
        ec = EvalConfig(n_points=500, timesteps_per_point=30)
        trained_loss, _ = val_loss(params, eval_set, cfg.sampler, ec)
        zero_loss, _ = val_loss(zero_params(cfg.model), eval_set, cfg.sampler, ec)
        assert trained_loss < zero_loss


class TestOffsetVlb:
    def test_nonnegative(self, trained):
        cfg, _, params, _ = trained
        eval_set = cfg.dataset.sample(300, np.random.default_rng(3))
        ec = EvalConfig(n_points=300, timesteps_per_point=40)
        mean, stderr = offset_vlb(params, eval_set, ec)
        assert mean >= 0.0

    def test_perfect_model_zero(self):
        # single-point dataset at the origin: with x0 = 0 the true velocity is
        # v = eps = x_t / t, and x0_hat = x_t - t*v = 0 exactly; build that
        # model by hand (zero weights can't produce x-dependence, so check the
        # integrand analytically through the pipeline with a zero dataset and
        # the identity that a zero-output model reconstructs x0_hat = x_t)
        cfg = ModelConfig(depth=1, width=4)
        params = zero_params(cfg)
        x0 = np.zeros((50, 2))
        labels = np.zeros(50, dtype=np.int64)
        ec = EvalConfig(n_points=50, timesteps_per_point=30, seed=2)
        mean, _ = offset_vlb(params, (x0, labels), ec)
        # zero model: x0_hat = x_t - 0 = x_t = t * eps, so error ||x0_hat||^2
        # = t^2 ||eps||^2 > 0: the bound is positive but finite
        assert mean > 0.0 and np.isfinite(mean)

    def test_decreases_across_checkpoints(self, trained):
        cfg, record, params, snaps = trained
        eval_set = cfg.dataset.sample(400, np.random.default_rng(4))
        ec = EvalConfig(n_points=400, timesteps_per_point=50, seed=7)
        values = []
        for flat in (snaps[0], snaps[200], params.flat):
            p = ParamSet(cfg.model, flat.copy())
            values.append(offset_vlb(p, eval_set, ec)[0])
        assert values[0] > values[1] > values[2]


class TestDivergence:
    def test_linear_field_via_network(self):
        # zero hidden weights, output bias only: divergence 0
        params = zero_params()
        div = divergence(params, np.random.randn(10, 2), 0.5, 0)
        assert np.allclose(div, 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for seed in range(20):
            cfg = ModelConfig(depth=int(rng.integers(1, 4)),
                              width=int(rng.integers(4, 16)))
            params = init(cfg, np.random.default_rng(seed))
            x = rng.standard_normal((3, 2))
            for t in (0.1, 0.5, 0.9):
                div = divergence(params, x, t, 1)
                h = 1e-6
                fd = np.zeros(3)
                from ditscale.netcore import forward
                for j in range(2):
                    e = np.zeros(2)
                    e[j] = h
                    vp = forward(params, x + e, t, 1)
                    vm = forward(params, x - e, t, 1)
                    fd += (vp[:, j] - vm[:, j]) / (2 * h)
                assert np.max(np.abs(div - fd)) < 1e-5

    def test_dim_limit(self):
        cfg = ModelConfig(depth=1, width=4, data_dim=9)
        params = zero_params(cfg)
        with pytest.raises(ConfigError):
            divergence(params, np.zeros((1, 9)), 0.5, 0)


class TestExactNll:
    TRUE = lambda self, x: 0.5 * math.log(2 * math.pi) + 0.5 * x**2

    def test_gaussian_oracle_at_zero(self):
        est = nll_via_ode(gaussian_marginal_field, np.array([[0.0]]), 500)
        assert est[0] == pytest.approx(self.TRUE(0.0), abs=1e-3)

    def test_gaussian_oracle_at_one(self):
        est = nll_via_ode(gaussian_marginal_field, np.array([[1.0], [-1.0]]), 500)
        assert est == pytest.approx([self.TRUE(1.0)] * 2, abs=1e-3)

    def test_gaussian_oracle_at_half(self):
        est = nll_via_ode(gaussian_marginal_field, np.array([[0.5], [-0.5]]), 500)
        assert est == pytest.approx([self.TRUE(0.5)] * 2, abs=1e-3)

    def test_first_order_convergence(self):
        xs = np.array([[1.0], [2.0]])
        true = np.array([self.TRUE(1.0), self.TRUE(2.0)])
        err500 = np.abs(nll_via_ode(gaussian_marginal_field, xs, 500) - true)
        err1000 = np.abs(nll_via_ode(gaussian_marginal_field, xs, 1000) - true)
        ratio = err500 / err1000
        assert np.all((1.7 < ratio) & (ratio < 2.3))

    def test_first_order_error_model_at_two(self):
        # the leading Euler error is (pi/2 - 1)/2 * x^2 / steps; at x = +-2 and
        # 500 steps that floor (~2.3e-3) sits above the 1e-3 seen for |x| <= 1
        gamma = (math.pi / 2.0 - 1.0) / 2.0
        for steps in (500, 1000):
            est = nll_via_ode(gaussian_marginal_field, np.array([[2.0]]), steps)
            err = est[0] - self.TRUE(2.0)
            assert err == pytest.approx(-gamma * 4.0 / steps, rel=0.05)

    def test_escape_radius(self):
        def explosive(x, t):
            return 1e8 * np.ones_like(x), np.zeros(x.shape[0])
        from ditscale.errors import DivergedRunError
        with pytest.raises(DivergedRunError):
            nll_via_ode(explosive, np.array([[0.0]]), 10)

    def test_network_nll_finite_and_deterministic(self, trained):
        cfg, _, params, _ = trained
        x = cfg.dataset.sample(20, np.random.default_rng(6))[0]
        ec = EvalConfig(nll_steps=100)
        a = exact_nll(params, x, np.zeros(20, dtype=np.int64), ec)
        b = exact_nll(params, x, np.zeros(20, dtype=np.int64), ec)
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))


class TestEulerSample:
    def test_cfg_scale_one_is_conditional(self, trained):
        cfg, _, params, _ = trained
        rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
        a = euler_sample(params, 64, 2, EvalConfig(sampling_steps=8, cfg_scale=1.0), rng_a)

        # cfg_scale=1 must equal a pure conditional integration, bit for bit
        from ditscale.evalkit import euler_sample_field
        from ditscale.netcore import forward
        cond = np.full(64, 2, dtype=np.int64)
        b = euler_sample_field(lambda x, t: forward(params, x, t, cond),
                               64, 2, 8, rng_b)
        assert np.array_equal(a, b)

    def test_analytic_field_moments(self):
        rng = np.random.default_rng(8)
        samples = euler_sample_field(lambda x, t: gaussian_marginal_field(x, t)[0],
                                     10_000, 1, 200, rng)
        se_mean = 1.0 / math.sqrt(10_000)
        se_var = math.sqrt(2.0 / 10_000)
        assert abs(samples.mean()) < 3 * se_mean
        assert abs(samples.var() - 1.0) < 3 * se_var

    def test_deterministic(self, trained):
        _, _, params, _ = trained
        ec = EvalConfig(sampling_steps=8, cfg_scale=2.0)
        a = euler_sample(params, 16, 1, ec, np.random.default_rng(9))
        b = euler_sample(params, 16, 1, ec, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_unconditional(self, trained):
        _, _, params, _ = trained
        ec = EvalConfig(sampling_steps=8)
        out = euler_sample(params, 16, None, ec, np.random.default_rng(10))
        assert out.shape == (16, 2)


class TestFrechet:
    def test_identical_sets(self):
        x = np.random.default_rng(11).standard_normal((500, 2))
        assert frechet_distance(x, x) <= 1e-9

    def test_mean_shift(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((100_000, 2))
        b = rng.standard_normal((100_000, 2)) + np.array([3.0, 4.0])
        # analytic distance 3^2 + 4^2 = 25 (equal covariances cancel)
        assert frechet_distance(a, b) == pytest.approx(25.0, abs=0.25)

    def test_one_dim_unequal_variance(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((200_000, 1))
        b = 2.0 * rng.standard_normal((200_000, 1))
        # closed form (sigma_a - sigma_b)^2 = 1
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=0.05)

    def test_symmetry(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal((300, 3))
        b = rng.standard_normal((300, 3)) * 1.5 + 0.3
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a),
                                                       rel=1e-10)

    def test_singular_covariance_ridge(self):
        a = np.zeros((10, 2))  # degenerate cloud
        b = np.random.default_rng(15).standard_normal((100, 2))
        with pytest.warns(UserWarning):
            d = frechet_distance(a, b)
        assert np.isfinite(d) and d > 0

    def test_too_few_samples(self):
        with pytest.raises(ConfigError):
            frechet_distance(np.zeros((2, 2)), np.zeros((10, 2)))


class TestEvaluate:
    def test_degenerate_shift_agrees(self, trained):
        cfg, _, params, _ = trained
        rng = np.random.default_rng(16)
        eval_set = cfg.dataset.sample(300, rng)
        ec = EvalConfig(n_points=300, timesteps_per_point=20, nll_steps=50,
                        sampling_steps=10)
        m_in, m_ood = evaluate(params, eval_set, eval_set, ec, cfg.sampler)
        assert m_in.val_loss == m_ood.val_loss
        assert m_in.frechet_distance == m_ood.frechet_distance

    def test_shifted_set_scores_worse(self, trained):
        cfg, _, params, _ = trained
        rng = np.random.default_rng(17)
        in_set = cfg.dataset.sample(400, rng)
        ood_set = cfg.dataset.shifted((3.0, 3.0)).sample(400, rng)
        ec = EvalConfig(n_points=400, timesteps_per_point=30, nll_steps=50,
                        sampling_steps=10)
        m_in, m_ood = evaluate(params, in_set, ood_set, ec, cfg.sampler)
        assert m_ood.val_loss > m_in.val_loss
        assert m_ood.frechet_distance > m_in.frechet_distance

    def test_metrics_serializable(self, trained):
        cfg, _, params, _ = trained
        eval_set = cfg.dataset.sample(64, np.random.default_rng(18))
        ec = EvalConfig(n_points=64, timesteps_per_point=5, nll_steps=20,
                        sampling_steps=5)
        m_in, _ = evaluate(params, eval_set, eval_set, ec)
        doc = m_in.to_dict()
        assert set(doc) >= {"val_loss", "offset_vlb", "offset_nll",
                            "frechet_distance"}
