"""Tests for the worker/master update mathematics and the baselines."""

import math

import numpy as np
import pytest

from asqn import (
    ConfigError,
    DivergenceError,
    LinearGaussianModel,
    MbLbfgsMaster,
    ParameterState,
    SamplerConfig,
    Subsample,
    UpdateVector,
    WorkerState,
    asgd_step,
    combined_gradient,
    compute_update,
    draw_subsample,
    full_gradient,
    master_apply,
    post_send_memory_update,
    reparameterize,
    sgld_step,
    stochastic_gradient,
)


def zero_gradient_model(dim=1):
    """A = 0, Y = 0 so likelihood gradient vanishes; at theta = 0 the prior
    gradient vanishes too and the whole potential gradient is zero."""
    return LinearGaussianModel(np.zeros((2, dim)), np.zeros(2), 1.0)


def quadratic_lg(seed=0, n=8, d=3):
    rng = np.random.default_rng(seed)
    return LinearGaussianModel(rng.standard_normal((n, d)),
                               rng.standard_normal(n), 1.0)


class TestSamplerConfig:
    def test_bad_step(self):
        with pytest.raises(ConfigError):
            SamplerConfig(step=0.0, friction=0.5)

    def test_bad_friction(self):
        with pytest.raises(ConfigError):
            SamplerConfig(step=0.1, friction=1.0)

    def test_noise_scale_infinite_beta(self):
        assert SamplerConfig(step=0.1, friction=0.5).noise_scale() == 0.0

    def test_noise_scale_value(self):
        cfg = SamplerConfig(step=4e-4, friction=3e-2, inv_temperature=5e2)
        assert cfg.noise_scale() == pytest.approx(
            math.sqrt(2 * 4e-4 * 3e-2 / 5e2)
        )


class TestComputeUpdate:
    def test_stationary_point_gives_zero_update(self):
        cfg = SamplerConfig(step=0.1, friction=0.5, n_s=2, n_o=1)
        model = zero_gradient_model(2)
        worker = WorkerState(cfg, 2)
        snap = ParameterState.zeros(2)
        upd, _ = compute_update(cfg, worker, snap, model, np.random.default_rng(0))
        np.testing.assert_array_equal(upd.d_theta, 0.0)
        np.testing.assert_array_equal(upd.d_u, 0.0)

    def test_empty_memory_momentum_sgd_increments(self):
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=3, n_o=2)
        model = quadratic_lg()
        worker = WorkerState(cfg, model.dim)
        rng = np.random.default_rng(1)
        theta = np.ones(model.dim)
        u = np.full(model.dim, 0.5)
        snap = ParameterState(theta=theta, u=u.copy(), iteration=0)
        upd, ctx = compute_update(cfg, worker, snap, model, rng)
        # replay the subsample draw to know which gradient was used
        g = combined_gradient(
            model, theta, draw_subsample(np.random.default_rng(1), model.n_records, 3, 2)
        )
        np.testing.assert_allclose(upd.d_u, -cfg.step * g - cfg.friction * u, atol=1e-14)
        np.testing.assert_allclose(upd.d_theta, u, atol=1e-14)

    def test_does_not_mutate_memory(self):
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=2, n_o=1)
        model = quadratic_lg()
        worker = WorkerState(cfg, model.dim)
        snap = ParameterState.zeros(model.dim)
        compute_update(cfg, worker, snap, model, np.random.default_rng(0))
        assert len(worker.memory) == 0

    def test_noise_variance_monte_carlo(self):
        # zero gradient, zero momentum: d_u is pure noise with per-component
        # variance 2 h' gamma' / beta.
        for step, friction, beta in [(4e-4, 3e-2, 5e2), (1e-2, 0.2, 10.0)]:
            cfg = SamplerConfig(step=step, friction=friction, inv_temperature=beta,
                                n_s=2, n_o=1)
            dim = 1000
            model = zero_gradient_model(dim)
            worker = WorkerState(cfg, dim)
            snap = ParameterState.zeros(dim)
            rng = np.random.default_rng(42)
            draws = np.concatenate(
                [compute_update(cfg, worker, snap, model, rng)[0].d_u
                 for _ in range(100)]
            )
            target = 2 * step * friction / beta
            assert abs(draws.var() / target - 1.0) < 0.03

    def test_halving_beta_doubles_variance(self):
        dim = 1000
        model = zero_gradient_model(dim)
        snap = ParameterState.zeros(dim)
        variances = []
        for beta in (20.0, 10.0):
            cfg = SamplerConfig(step=1e-2, friction=0.2, inv_temperature=beta,
                                n_s=2, n_o=1)
            worker = WorkerState(cfg, dim)
            rng = np.random.default_rng(7)
            draws = np.concatenate(
                [compute_update(cfg, worker, snap, model, rng)[0].d_u
                 for _ in range(100)]
            )
            variances.append(draws.var())
        assert abs(variances[1] / variances[0] - 2.0) < 0.1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_gradient_raises(self):
        cfg = SamplerConfig(step=0.1, friction=0.5, n_s=2, n_o=1)
        model = quadratic_lg()
        worker = WorkerState(cfg, model.dim)
        snap = ParameterState(theta=np.full(model.dim, np.inf),
                              u=np.zeros(model.dim), iteration=3)
        with pytest.raises(DivergenceError) as exc:
            compute_update(cfg, worker, snap, model, np.random.default_rng(0))
        assert exc.value.iteration == 3


class TestPostSendMemoryUpdate:
    def test_first_call_forms_no_pair(self):
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=2, n_o=1)
        model = quadratic_lg()
        worker = WorkerState(cfg, model.dim)
        snap = ParameterState.zeros(model.dim)
        _, ctx = compute_update(cfg, worker, snap, model, np.random.default_rng(0))
        assert post_send_memory_update(worker, ctx, model) is False
        assert worker.local_iter == 1
        assert len(worker.memory) == 0

    def test_identical_snapshots_rejected(self):
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=2, n_o=1)
        model = quadratic_lg()
        worker = WorkerState(cfg, model.dim)
        snap = ParameterState.zeros(model.dim)
        rng = np.random.default_rng(0)
        for _ in range(2):
            _, ctx = compute_update(cfg, worker, snap, model, rng)
            admitted = post_send_memory_update(worker, ctx, model)
        assert admitted is False  # s = 0 pair
        assert len(worker.memory) == 0

    def test_full_batch_overlap_gives_exact_gradient_difference(self):
        model = quadratic_lg()
        n = model.n_records
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=n, n_o=n)
        worker = WorkerState(cfg, model.dim)
        rng = np.random.default_rng(3)
        thetas = [rng.standard_normal(model.dim) for _ in range(2)]
        # force the overlap set to be the full dataset by monkeypatching the
        # subsample draw through a deterministic rng is brittle; instead drive
        # the bookkeeping directly with full-batch contexts.
        from asqn.sampler import UpdateContext

        for i, theta in enumerate(thetas):
            full = np.arange(n)
            ctx = UpdateContext(
                snapshot_theta=theta.copy(),
                subsample=Subsample(full, full),
                overlap_gradient=stochastic_gradient(model, theta, full),
                snapshot_iteration=i,
            )
            post_send_memory_update(worker, ctx, model)
        assert len(worker.memory) == 1
        s, y, _ = worker.memory.pairs[0]
        np.testing.assert_allclose(s, thetas[1] - thetas[0], atol=1e-12)
        np.testing.assert_allclose(
            y, full_gradient(model, thetas[1]) - full_gradient(model, thetas[0]),
            atol=1e-12,
        )

    def test_consistent_index_sets_across_pair(self):
        # the admitted y must difference two gradients on the SAME index set
        model = quadratic_lg()
        cfg = SamplerConfig(step=0.01, friction=0.1, n_s=3, n_o=2)
        worker = WorkerState(cfg, model.dim)
        rng = np.random.default_rng(4)
        prev_ctx = None
        for i in range(2):
            snap = ParameterState(theta=np.full(model.dim, float(i)),
                                  u=np.zeros(model.dim), iteration=i)
            _, ctx = compute_update(cfg, worker, snap, model, rng)
            if prev_ctx is not None:
                expected_y = (
                    stochastic_gradient(model, ctx.snapshot_theta,
                                        prev_ctx.subsample.o_indices)
                    - prev_ctx.overlap_gradient
                )
            post_send_memory_update(worker, ctx, model)
            prev_ctx = ctx
        assert len(worker.memory) == 1
        _, y, _ = worker.memory.pairs[0]
        np.testing.assert_allclose(y, expected_y, atol=1e-12)


class TestMasterApply:
    def test_zero_update_increments_n_only(self):
        state = ParameterState(np.array([1.0]), np.array([2.0]), 5)
        new = master_apply(state, UpdateVector(np.zeros(1), np.zeros(1)))
        assert new.iteration == 6
        np.testing.assert_array_equal(new.theta, state.theta)
        np.testing.assert_array_equal(new.u, state.u)

    def test_componentwise_addition(self):
        state = ParameterState(np.array([1.0, 1.0]), np.array([0.0, 0.0]), 0)
        new = master_apply(
            state, UpdateVector(np.array([1.0, -1.0]), np.array([2.0, 2.0]))
        )
        np.testing.assert_array_equal(new.theta, [2.0, 0.0])
        np.testing.assert_array_equal(new.u, [2.0, 2.0])

    def test_sequence_equals_summed_update(self):
        rng = np.random.default_rng(5)
        updates = [
            UpdateVector(rng.standard_normal(3), rng.standard_normal(3))
            for _ in range(10)
        ]
        state = ParameterState.zeros(3)
        for upd in updates:
            state = master_apply(state, upd)
        np.testing.assert_allclose(
            state.theta, sum(u.d_theta for u in updates), atol=1e-12
        )
        np.testing.assert_allclose(state.u, sum(u.d_u for u in updates), atol=1e-12)
        assert state.iteration == 10

    def test_nonfinite_result_raises(self):
        state = ParameterState.zeros(1)
        with pytest.raises(DivergenceError):
            master_apply(state, UpdateVector(np.array([np.nan]), np.zeros(1)))


class TestReparameterize:
    def test_arithmetic(self):
        assert reparameterize(0.1, 0.5) == pytest.approx((0.01, 0.05))

    def test_boundary_error(self):
        with pytest.raises(ValueError):
            reparameterize(1.0, 1.0)

    def test_round_trip(self):
        hp, gp = reparameterize(0.3, 0.7)
        h = math.sqrt(hp)
        assert h == pytest.approx(0.3, abs=1e-14)
        assert gp / h == pytest.approx(0.7, abs=1e-14)


class TestSgld:
    def test_infinite_beta_is_plain_sgd(self):
        model = quadratic_lg()
        theta = np.ones(model.dim)
        idx = np.arange(model.n_records)
        new = sgld_step(theta, 0.01, math.inf, model, idx, np.random.default_rng(0))
        np.testing.assert_allclose(
            new, theta - 0.01 * full_gradient(model, theta), atol=1e-12
        )

    def test_noise_variance(self):
        model = zero_gradient_model(1000)
        rng = np.random.default_rng(8)
        h, beta = 0.01, 5.0
        draws = np.concatenate(
            [sgld_step(np.zeros(1000), h, beta, model, [0], rng) for _ in range(100)]
        )
        assert abs(draws.var() / (2 * h / beta) - 1.0) < 0.03

    def test_stationary_variance_1d_quadratic(self):
        # U = theta^2 / 2 via A = [0], Y = [0] (prior only); the discrete
        # chain theta' = (1 - h) theta + sqrt(2h/beta) Z has stationary
        # variance (2h/beta) / (1 - (1-h)^2) = 1 / (beta (1 - h/2)).
        model = LinearGaussianModel(np.zeros((1, 1)), np.zeros(1), 1.0)
        rng = np.random.default_rng(9)
        h, beta = 0.05, 2.0
        theta = np.zeros(1)
        samples = []
        for i in range(100000):
            theta = sgld_step(theta, h, beta, model, [0], rng)
            if i >= 5000:
                samples.append(theta[0])
        target = 1.0 / (beta * (1 - h / 2))
        assert abs(np.var(samples) / target - 1.0) < 0.10


class TestAsgd:
    def test_full_batch_is_gradient_descent(self):
        model = quadratic_lg()
        theta = np.ones(model.dim)
        upd = asgd_step(theta, 0.05, model, np.arange(model.n_records))
        np.testing.assert_allclose(
            upd.d_theta, -0.05 * full_gradient(model, theta), atol=1e-12
        )
        np.testing.assert_array_equal(upd.d_u, 0.0)

    def test_quadratic_contraction(self):
        # 1-d instance: U = theta^2/2 + (theta - 2)^2/2, L = 2, theta* = 1
        model = LinearGaussianModel(np.array([[1.0]]), np.array([2.0]), 1.0)
        h = 0.3  # < 2/L, contraction factor |1 - h L| = 0.4
        theta = np.array([5.0])
        for _ in range(5):
            new = theta + asgd_step(theta, h, model, [0]).d_theta
            assert abs(new[0] - 1.0) < abs(theta[0] - 1.0)
            theta = new

    def test_zero_gradient_zero_update(self):
        model = zero_gradient_model(2)
        upd = asgd_step(np.zeros(2), 0.1, model, [0])
        np.testing.assert_array_equal(upd.d_theta, 0.0)


class TestMbLbfgs:
    def test_single_worker_full_batch_is_gd_step(self):
        model = quadratic_lg()
        master = MbLbfgsMaster(model.dim, step=0.05, use_memory=False)
        theta = np.ones(model.dim)
        g = stochastic_gradient(model, theta, np.arange(model.n_records))
        new = master.round(theta, [g], np.arange(model.n_records), model)
        np.testing.assert_allclose(new, theta - 0.05 * g, atol=1e-12)

    def test_identical_gradients_equal_single_worker(self):
        model = quadratic_lg()
        theta = np.ones(model.dim)
        g = full_gradient(model, theta)
        m1 = MbLbfgsMaster(model.dim, step=0.05, use_memory=False)
        m4 = MbLbfgsMaster(model.dim, step=0.05, use_memory=False)
        idx = np.arange(model.n_records)
        np.testing.assert_allclose(
            m1.round(theta.copy(), [g], idx, model),
            m4.round(theta.copy(), [g] * 4, np.tile(idx, 4), model),
            atol=1e-12,
        )

    def test_empty_round_skipped(self):
        model = quadratic_lg()
        master = MbLbfgsMaster(model.dim, step=0.05)
        theta = np.ones(model.dim)
        np.testing.assert_array_equal(master.round(theta, [], [], model), theta)

    def test_converges_on_1d_quadratic(self):
        # U = theta^2/2 + (theta-2)^2/2, optimum theta* = 1; step scaled to
        # the instance's curvature (L = 2).
        model = LinearGaussianModel(np.array([[1.0]]), np.array([2.0]), 1.0)
        master = MbLbfgsMaster(1, step=0.1)
        theta = np.array([5.0])
        idx = np.array([0])
        for _ in range(200):
            g = stochastic_gradient(model, theta, idx)
            theta = master.round(theta, [g], idx, model)
        assert abs(theta[0] - 1.0) < 1e-6


class TestDegenerateLimit:
    def test_matches_reference_momentum_sgd(self):
        """beta = inf, W = 1 (zero staleness), memory disabled, rho = 0: the
        trajectory must equal classical momentum SGD with a shared
        subsample stream, componentwise to 1e-12 over 100 steps."""
        model = quadratic_lg(seed=11)
        cfg = SamplerConfig(step=1e-3, friction=0.1, n_s=3, n_o=2,
                            use_memory=False)
        worker = WorkerState(cfg, model.dim)
        state = ParameterState.zeros(model.dim)
        rng = np.random.default_rng(12)
        trajectory = []
        for _ in range(100):
            upd, ctx = compute_update(cfg, worker, state, model, rng)
            state = master_apply(state, upd)
            post_send_memory_update(worker, ctx, model)
            trajectory.append(state.theta.copy())

        # reference: u' = (1 - gamma') u - h' grad, theta' = theta + u (old u)
        rng = np.random.default_rng(12)
        theta = np.zeros(model.dim)
        u = np.zeros(model.dim)
        for n in range(100):
            sub = draw_subsample(rng, model.n_records, 3, 2)
            g = combined_gradient(model, theta, sub)
            theta = theta + u
            u = (1 - cfg.friction) * u - cfg.step * g
            np.testing.assert_allclose(trajectory[n], theta, atol=1e-12)
