import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import enumerate_box_qp, random_box_qp, regulation_run
from bompc.errors import DimensionMismatch, MaxIterations
from bompc.mpc import (
    MpcConfig,
    MpcController,
    QpProblem,
    QpStatus,
    build_qp,
    condense,
    kkt_residual,
    mpc_step,
    solve_qp,
)
from bompc.plant import LinearPlant, SoftRodPlant, linearize
from bompc.predmodel import PredictionModel, decode_theta


def _scalar_chain(u_max=10.0):
    model = PredictionModel.from_matrices([[0.0]], [[1.0]], [[1.0]], gain=[[0.0]])
    cfg = MpcConfig(
        horizon=1,
        q_weight=[[1.0]],
        r_weight=[[1.0]],
        u_min=[-u_max],
        u_max=[u_max],
        y_min=[-5.0],
        y_max=[5.0],
    )
    return model, cfg


class TestConfig:
    def test_defaults(self):
        cfg = MpcConfig()
        assert cfg.horizon == 10
        np.testing.assert_array_equal(cfg.q_weight, 1e3 * np.eye(2))
        np.testing.assert_array_equal(cfg.r_weight, np.eye(3))
        np.testing.assert_array_equal(cfg.u_max, [10.0] * 3)
        np.testing.assert_array_equal(cfg.y_min, [-0.1] * 2)
        assert cfg.slack_weight == 1e6

    @pytest.mark.parametrize(
        "kw",
        [
            {"horizon": 0},
            {"u_min": 1.0, "u_max": 1.0},
            {"r_weight": np.zeros((3, 3))},
            {"q_weight": -np.eye(2)},
            {"slack_weight": 0.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MpcConfig(**kw)


class TestBuildQp:
    def test_zero_problem(self):
        model = decode_theta(np.r_[0.5, 0, 0, 0.5, np.full(6, 0.1)])
        p = build_qp(model, MpcConfig(), np.zeros((10, 2)))
        np.testing.assert_array_equal(p.gradient, 0.0)
        x, _ = solve_qp(p)
        np.testing.assert_allclose(x, 0.0, atol=1e-12)

    def test_scalar_unconstrained_half(self):
        model, cfg = _scalar_chain()
        x, _ = solve_qp(build_qp(model, cfg, [[1.0]]))
        assert x[0] == pytest.approx(0.5, abs=1e-12)

    def test_scalar_clamped(self):
        model, cfg = _scalar_chain(u_max=0.3)
        x, _ = solve_qp(build_qp(model, cfg, [[1.0]]))
        grid = np.linspace(-0.3, 0.3, 60001)
        assert x[0] == pytest.approx(grid[np.argmin((grid - 1) ** 2 + grid**2)], abs=1e-5)
        assert x[0] == 0.3

    def test_hessian_symmetric_and_ridged_pd(self):
        model = decode_theta(np.random.default_rng(0).uniform(-1, 1, 10))
        h = build_qp(model, MpcConfig(), np.zeros((10, 2))).hessian
        assert np.max(np.abs(h - h.T)) <= 1e-10 * np.max(np.abs(h))
        np.linalg.cholesky(h + 1e-8 * np.eye(h.shape[0]))

    def test_short_window_padded(self):
        model = decode_theta(np.r_[0.5, 0, 0, 0.5, np.full(6, 0.1)])
        a = build_qp(model, MpcConfig(), [[0.02, 0.01]])
        b = build_qp(model, MpcConfig(), np.tile([0.02, 0.01], (10, 1)))
        np.testing.assert_array_equal(a.gradient, b.gradient)

    def test_reference_dimension_checked(self):
        model = decode_theta(np.zeros(10))
        with pytest.raises(DimensionMismatch):
            build_qp(model, MpcConfig(), np.zeros((10, 3)))

    def test_condensed_matches_rollout(self):
        rng = np.random.default_rng(1)
        model = decode_theta(rng.uniform(-0.6, 0.6, 10))
        model.z = rng.standard_normal(2)
        cd = condense(model, 6)
        u = rng.standard_normal((6, 3))
        # rollout returns y_0..y_5; the condensed stack holds y_1..y_6
        extended = model.rollout(np.vstack([u, np.zeros((1, 3))]))[1:]
        np.testing.assert_allclose(cd.phi @ model.z + cd.gamma @ u.ravel(), extended.ravel(), atol=1e-12)


class TestSolveQp:
    def test_origin_optimal(self):
        x, status = solve_qp(QpProblem(np.eye(2), np.zeros(2), -np.ones(2), np.ones(2)))
        np.testing.assert_array_equal(x, 0.0)
        assert status is QpStatus.OPTIMAL

    def test_saturated_box(self):
        x, _ = solve_qp(QpProblem(np.eye(2), np.array([-2.0, -2.0]), -np.ones(2), np.ones(2)))
        np.testing.assert_array_equal(x, [1.0, 1.0])

    def test_random_psd_against_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            h, g, lo, hi = random_box_qp(rng, max_dim=6)
            p = QpProblem(h, g, lo, hi)
            x, _ = solve_qp(p)
            assert p.objective(x) == pytest.approx(enumerate_box_qp(h, g, lo, hi), abs=1e-6)
            assert np.all(x >= lo) and np.all(x <= hi)
            assert kkt_residual(p, x) < 1e-6

    def test_unbounded_raises(self):
        p = QpProblem(np.zeros((1, 1)), np.array([1.0]), np.array([-np.inf]), np.array([np.inf]))
        with pytest.raises(MaxIterations):
            solve_qp(p)

    def test_general_inequalities_need_start(self):
        p = QpProblem(np.eye(1), np.zeros(1), -np.ones(1), np.ones(1), np.ones((1, 1)), np.ones(1))
        with pytest.raises(ValueError):
            solve_qp(p)

    def test_ill_conditioned_mpc_qp(self):
        # strongly unstable model: Gamma spans ~10 orders of magnitude
        theta = np.array([1.2, -1.2, -1.2, 1.2, 0.09, -0.5, -0.5, 0.5, -0.314, 0.5])
        model = decode_theta(theta)
        model.z = np.array([0.05, -0.04])
        p = build_qp(model, MpcConfig(), np.zeros((10, 2)))
        x, status = solve_qp(p)
        assert status is QpStatus.OPTIMAL
        assert p.is_feasible(x)


class TestController:
    def test_converged_regulation_gives_zero_input(self):
        p = SoftRodPlant(cubic_stiffness=0.0, noise_std=0.0)
        a, b, c = linearize(p, 0.05)
        model = PredictionModel.from_matrices(a, b, c)
        u = mpc_step(model, MpcConfig(), np.zeros((10, 2)), np.zeros(2), np.zeros(3))
        assert np.max(np.abs(u)) < 1e-6

    def test_step_regulation_exact_model(self):
        pos, us = regulation_run()
        err = np.max(np.abs(pos - [0.05, 0.0]), axis=1)
        assert np.all(err[40:] < 1e-3)
        assert np.all(np.abs(us) <= 10.0)

    def test_reference_outside_output_bounds(self):
        # exact model of a noisy first-order linear plant; reference beyond y_max
        a = 0.8 * np.eye(2)
        b = 0.05 * np.array([[1.0, -0.5, -0.5], [0.0, 0.866, -0.866]])
        c = np.eye(2)
        noise = 0.01
        plant = LinearPlant(a, b, c, noise_std=noise, seed=5)
        ctl = MpcController(PredictionModel.from_matrices(a, b, c), MpcConfig())
        window = np.tile([0.2, 0.0], (10, 1))
        y_prev = u_prev = None
        ys = []
        for _ in range(200):
            y = plant.measure()
            u = ctl.step(window, y_prev, u_prev)
            plant.step(u)
            y_prev, u_prev = y, u
            ys.append(plant.position)
        ys = np.array(ys)
        assert ys[-50:, 0].mean() > 0.09
        assert np.all(ys[:, 0] <= 0.1 + 2 * noise + 1e-3)
        assert ctl.slack_steps > 0

    def test_failure_applies_zero_and_counts(self, monkeypatch):
        import bompc.mpc as mpc_mod

        def boom(*_a, **_k):
            raise MaxIterations("forced")

        monkeypatch.setattr(mpc_mod, "solve_qp", boom)
        ctl = MpcController(decode_theta(np.r_[0.5, 0, 0, 0.5, np.full(6, 0.1)]), MpcConfig())
        u = ctl.step(np.full((10, 2), 0.05))
        np.testing.assert_array_equal(u, 0.0)
        assert ctl.failures == 1


# --- properties ---------------------------------------------------------

theta_strategy = arrays(np.float64, 10, elements=st.floats(-1.2, 1.2)).map(
    lambda t: np.r_[t[:4], np.clip(t[4:], -0.5, 0.5)]
)


@settings(max_examples=40, deadline=None)
@given(theta=theta_strategy, z=st.tuples(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2)), r=st.floats(-0.1, 0.1))
def test_input_feasibility(theta, z, r):
    cfg = MpcConfig()
    ctl = MpcController(decode_theta(theta), cfg)
    ctl.model.z = np.array(z)
    u = ctl.step(np.full((10, 2), r))
    assert np.all(u >= cfg.u_min) and np.all(u <= cfg.u_max)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_receding_horizon_matches_batch_least_squares(seed):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.5, 0.5, 10)
    model = decode_theta(theta)
    model.z = rng.uniform(-0.05, 0.05, 2)
    big = 1e6
    cfg = MpcConfig(u_min=-big, u_max=big, y_min=-big, y_max=big)
    ref = rng.uniform(-0.05, 0.05, (10, 2))
    x, _ = solve_qp(build_qp(model, cfg, ref))
    # batch solution of the stacked quadratic cost by normal equations
    cd = condense(model, 10)
    q_bar = np.kron(np.eye(10), cfg.q_weight)
    r_bar = np.kron(np.eye(10), cfg.r_weight)
    lhs = cd.gamma.T @ q_bar @ cd.gamma + r_bar
    rhs = cd.gamma.T @ q_bar @ (ref.ravel() - cd.phi @ model.z)
    u_batch = np.linalg.solve(lhs, rhs)
    np.testing.assert_allclose(x[:3], u_batch[:3], atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(theta=theta_strategy, seed=st.integers(0, 10_000))
def test_convexity_against_random_feasible_points(theta, seed):
    rng = np.random.default_rng(seed)
    model = decode_theta(theta)
    model.z = rng.uniform(-0.1, 0.1, 2)
    p = build_qp(model, MpcConfig(), rng.uniform(-0.05, 0.05, (10, 2)))
    x, _ = solve_qp(p)
    f = p.objective(x)
    n_u = 30
    for _ in range(1000):
        u = rng.uniform(p.lower[:n_u], p.upper[:n_u])
        viol = np.maximum(p.ineq_matrix[:, :n_u] @ u - p.ineq_bound, 0.0)
        # smallest feasible slack for this u
        s = np.maximum(viol[:20], viol[20:])
        cand = np.r_[u, s]
        assert f <= p.objective(cand) + 1e-9 * max(1.0, abs(f))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_weight_scaling_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    model = decode_theta(rng.uniform(-0.5, 0.5, 10))
    model.z = rng.uniform(-0.05, 0.05, 2)
    big = 1e9
    ref = rng.uniform(-0.05, 0.05, (10, 2))
    base = MpcConfig(u_min=-big, u_max=big, y_min=-big, y_max=big)
    scaled = MpcConfig(q_weight=scale * base.q_weight, r_weight=scale * base.r_weight,
                       u_min=-big, u_max=big, y_min=-big, y_max=big)
    x1, _ = solve_qp(build_qp(model, base, ref))
    x2, _ = solve_qp(build_qp(model, scaled, ref))
    np.testing.assert_allclose(x1[:30], x2[:30], atol=1e-9)
