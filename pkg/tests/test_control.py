import numpy as np
import pytest

from cdf_barrier.barrier import BarrierEval, UncertaintySample
from cdf_barrier.bezier import PiecewiseBezier
from cdf_barrier.control import (
    ControlParams,
    GovernorState,
    cbc,
    cbf_qp,
    control_step,
    dr_cbf_qp,
    governor_step,
    init_governor,
    pd_nominal,
)


@pytest.fixture
def params():
    return ControlParams()


def line_traj(q0, qG):
    return PiecewiseBezier.from_waypoints(np.array([q0, qG], dtype=float))


def env_eval(value, grad_q, dhdt=0.0):
    return BarrierEval(value=value, grad_q=np.asarray(grad_q, dtype=float),
                       dhdt=dhdt, argmin_source=("env", 0))


# ---------------------------------------------------------------- governor


def test_governor_rate_at_reference(params):
    traj = line_traj([0.0, 0.0], [1.0, 0.0])
    state = GovernorState(s=0.0, reference=traj.eval(0.0))
    new = governor_step(state, np.zeros(2), traj, dt=0.01, params=params)
    assert (new.s - state.s) / 0.01 == pytest.approx(0.2)


def test_governor_saturates_at_one(params):
    traj = line_traj([0.0, 0.0], [1.0, 0.0])
    state = GovernorState(s=1.0, reference=traj.eval(1.0))
    new = governor_step(state, np.zeros(2), traj, dt=0.01, params=params)
    assert new.s == 1.0


def test_governor_rate_with_unit_error(params):
    traj = line_traj([0.0, 0.0], [1.0, 0.0])
    state = GovernorState(s=0.0, reference=traj.eval(0.0))
    q = np.array([0.0, 1.0])  # distance 1 from gamma(0)
    new = governor_step(state, q, traj, dt=0.01, params=params)
    assert (new.s - state.s) / 0.01 == pytest.approx(0.1)


def test_governor_monotone(params):
    traj = line_traj([0.0, 0.0], [2.0, 1.0])
    state = init_governor(traj)
    rng = np.random.default_rng(0)
    for _ in range(200):
        q = traj.eval(state.s) + rng.normal(scale=0.3, size=2)
        new = governor_step(state, q, traj, dt=0.02, params=params)
        assert new.s >= state.s
        state = new


# ---------------------------------------------------------------- PD law


def test_pd_zero_at_reference(params):
    u = pd_nominal(np.array([1.0, 2.0]), np.zeros(2), np.array([1.0, 2.0]), params)
    np.testing.assert_allclose(u, 0.0)


def test_pd_proportional(params):
    e = np.array([0.5, -0.2])
    u = pd_nominal(e, np.zeros(2), np.zeros(2), params)
    np.testing.assert_allclose(u, -0.8 * e)


def test_pd_damping(params):
    v = np.array([0.3, 0.1])
    u = pd_nominal(np.zeros(2), v, np.zeros(2), params)
    np.testing.assert_allclose(u, -0.1 * v)


# ---------------------------------------------------------------- CBC


def test_cbc_examples():
    ev = env_eval(0.5, [1.0, 0.0])
    assert cbc(ev, np.array([-1.0, 0.0]), 1.0) == pytest.approx(-0.5)
    ev = env_eval(1.0, [0.3, -0.4])
    assert cbc(ev, np.zeros(2), 1.0) == pytest.approx(1.0)
    ev = env_eval(0.7, [0.0, 0.0], dhdt=-0.2)
    for u in (np.zeros(2), np.array([1.0, -1.0])):
        assert cbc(ev, u, 1.0) == pytest.approx(0.5)


# ---------------------------------------------------------------- CBF-QP


def test_cbf_qp_inactive(params):
    ev = env_eval(1.0, [1.0, 0.0])
    u_bar = np.array([0.5, -0.5])
    u, diag = cbf_qp(u_bar, ev, params)
    np.testing.assert_array_equal(u, u_bar)
    assert not diag.filter_active and not diag.unsafe_fallback


def test_cbf_qp_halfspace_projection(params):
    # h=0, grad=(1,0): constraint u1 >= 0; nominal (-1,0) projects to origin
    ev = env_eval(0.0, [1.0, 0.0])
    u, diag = cbf_qp(np.array([-1.0, 0.0]), ev, params)
    np.testing.assert_allclose(u, [0.0, 0.0], atol=1e-6)
    assert diag.filter_active


def test_cbf_qp_infeasible_fallback(params):
    # gradient zero and alpha*h + dhdt < 0: no control can help
    ev = env_eval(-0.5, [0.0, 0.0])
    u, diag = cbf_qp(np.array([0.3, 0.3]), ev, params)
    assert diag.unsafe_fallback


def test_cbf_qp_respects_box(params):
    ev = env_eval(0.02, [0.0, 1.0], dhdt=-0.5)
    u, diag = cbf_qp(np.array([0.0, -2.0]), ev, params)
    lo, hi = params.box(2)
    assert np.all(u >= lo - 1e-9) and np.all(u <= hi + 1e-9)
    assert cbc(ev, u, params.alpha_slope) >= -1e-6


# ---------------------------------------------------------------- DR-CBF-QP


def sample(grad, alpha_term, dhdt=0.0):
    return UncertaintySample(grad_q=np.asarray(grad, dtype=float),
                             alpha_term=alpha_term, dhdt=dhdt)


def test_dr_single_benign_sample_returns_nominal(params):
    s = sample([0.0, 0.0], 1.0, 0.0)
    u_bar = np.array([0.7, -1.2])
    u, diag = dr_cbf_qp(u_bar, [s], params)
    np.testing.assert_array_equal(u, u_bar)
    assert not diag.filter_active


def test_dr_r_zero_reduces_to_sample_cbf(params_r0=None):
    params = ControlParams(wasserstein_r=0.0)
    s = sample([1.0, 0.0], 0.4, 0.0)
    u_bar = np.array([0.2, 0.1])  # CBC(u_bar) = 0.6 >= 0
    u, diag = dr_cbf_qp(u_bar, [s], params)
    np.testing.assert_array_equal(u, u_bar)


def test_dr_identical_samples_match_single(params):
    s = sample([1.0, 0.0], 0.02, -0.05)
    u_bar = np.array([-1.0, 0.0])
    u1, _ = dr_cbf_qp(u_bar, [s], params)
    u10, _ = dr_cbf_qp(u_bar, [s] * 10, params)
    np.testing.assert_allclose(u1, u10, atol=1e-5)


def brute_dr_single_sample(u_bar, s, params, n=801):
    """Grid oracle for the N=1 case: CBC(u) >= (r/eps)*|u|_inf."""
    lo, hi = params.box(2)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    U1, U2 = np.meshgrid(xs, ys, indexing="ij")
    cbcv = s.grad_q[0] * U1 + s.grad_q[1] * U2 + s.alpha_term + s.dhdt
    feas = cbcv >= (params.wasserstein_r / params.eps) * np.maximum(np.abs(U1), np.abs(U2))
    obj = (U1 - u_bar[0]) ** 2 + (U2 - u_bar[1]) ** 2
    obj[~feas] = np.inf
    return float(obj.min())


def test_dr_matches_grid_oracle(params):
    rng = np.random.default_rng(1)
    for _ in range(10):
        g = rng.normal(size=2)
        g /= np.linalg.norm(g)
        s = sample(g, float(rng.uniform(0.0, 0.2)), float(rng.uniform(-0.3, 0.1)))
        u_bar = np.clip(rng.normal(scale=1.2, size=2), -2, 2)
        u, diag = dr_cbf_qp(u_bar, [s], params)
        if diag.unsafe_fallback:
            continue
        got = float(np.sum((u - u_bar) ** 2))
        want = brute_dr_single_sample(u_bar, s, params)
        assert got <= want + 0.01
        # and u satisfies the single-sample DR feasibility condition
        cbcv = s.grad_q @ u + s.alpha_term + s.dhdt
        assert cbcv >= (params.wasserstein_r / params.eps) * np.max(np.abs(u)) - 1e-5


def test_dr_infeasible_fallback_flag(params):
    s = sample([0.0, 0.0], -0.5, 0.0)  # constraint cannot be met by any u
    u, diag = dr_cbf_qp(np.zeros(2), [s], params)
    assert diag.unsafe_fallback


def test_dr_more_conservative_than_mean_cbf(params):
    rng = np.random.default_rng(2)
    for _ in range(15):
        N = 6
        samples = [sample(rng.normal(size=2), float(rng.uniform(-0.05, 0.3)),
                          float(rng.uniform(-0.2, 0.05))) for _ in range(N)]
        u_bar = np.clip(rng.normal(scale=1.0, size=2), -2, 2)
        u_dr, ddr = dr_cbf_qp(u_bar, samples, params)
        if ddr.unsafe_fallback:
            continue
        mean_grad = np.mean([s.grad_q for s in samples], axis=0)
        mean_aff = np.mean([s.alpha_term + s.dhdt for s in samples])
        ev = BarrierEval(value=mean_aff / params.alpha_slope, grad_q=mean_grad,
                         dhdt=0.0, argmin_source=("env", 0))
        u_cbf, dcbf = cbf_qp(u_bar, ev, params)
        if dcbf.unsafe_fallback:
            continue
        assert np.linalg.norm(u_dr - u_bar) >= np.linalg.norm(u_cbf - u_bar) - 1e-6


def test_dr_chance_constraint_soundness_small(params):
    rng = np.random.default_rng(3)
    passed = 0
    for _ in range(10):
        g0 = rng.normal(size=2)
        g0 /= np.linalg.norm(g0)
        xi0 = np.concatenate([g0, [0.25, -0.05]])
        sigma = 0.004
        xis = xi0 + sigma * rng.normal(size=(params.N, 4))
        samples = [sample(x[:2], x[2], x[3]) for x in xis]
        u_bar = np.clip(-1.5 * g0 + 0.2 * rng.normal(size=2), -2, 2)
        u, diag = dr_cbf_qp(u_bar, samples, params)
        if diag.unsafe_fallback:
            continue
        draws = xi0 + sigma * rng.normal(size=(4000, 4))
        cbcs = draws[:, :2] @ u + draws[:, 2] + draws[:, 3]
        p = float(np.mean(cbcs >= 0))
        assert p >= 1 - params.eps - 0.03
        passed += 1
    assert passed >= 5


# ---------------------------------------------------------------- control_step


class FarField:
    def evaluate(self, points, q):
        n = np.atleast_2d(points).shape[0]
        return (np.full(n, 50.0), np.zeros((n, q.size)), np.zeros((n, 2)))

    def realizations(self, points, q, M2, seed):
        v, gq, gp = self.evaluate(points, q)
        return np.tile(v, (M2, 1)), np.tile(gq, (M2, 1, 1)), np.tile(gp, (M2, 1, 1))


class FarSelf:
    def evaluate(self, q):
        return 50.0, np.zeros_like(q)

    def realizations(self, q, M2, seed):
        return np.full(M2, 50.0), np.zeros((M2, q.size))


def test_control_step_pd_clamps(params):
    traj = line_traj([0.0, 0.0], [3.0, 0.0])
    gov = init_governor(traj)
    q = np.array([-3.0, 0.0])
    u, gov2, diag = control_step(q, np.zeros(2), traj, None, FarField(), FarSelf(),
                                 gov, params, mode="pd")
    lo, hi = params.box(2)
    assert np.all(u >= lo) and np.all(u <= hi)
    assert gov2.s >= gov.s


def test_control_step_far_obstacle_dr_equals_pd(params):
    from cdf_barrier.barrier import PointCloud

    traj = line_traj([0.0, 0.0], [1.5, 1.0])
    cloud = PointCloud(points=np.array([[4.0, 4.0]]), velocities=np.zeros((1, 2)))
    q = np.array([0.2, 0.1])
    gov = init_governor(traj)
    u_pd, _, _ = control_step(q, np.zeros(2), traj, cloud, FarField(), FarSelf(),
                              gov, params, mode="pd", seed=0)
    u_dr, _, _ = control_step(q, np.zeros(2), traj, cloud, FarField(), FarSelf(),
                              gov, params, mode="dr_cbf", seed=0)
    np.testing.assert_allclose(u_pd, u_dr, atol=1e-12)


def test_control_step_deterministic(params):
    traj = line_traj([0.0, 0.0], [1.5, 1.0])
    q = np.array([0.2, 0.1])
    gov = init_governor(traj)
    outs = []
    for _ in range(2):
        u, _, _ = control_step(q, np.zeros(2), traj, None, FarField(), FarSelf(),
                               gov, params, mode="dr_cbf", seed=3)
        outs.append(u)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_obstacle_free_tracking_converges(params):
    traj = line_traj([0.0, 0.0], [1.2, -0.8])
    qG = traj.eval(1.0)
    q = traj.eval(0.0).copy()
    u_prev = np.zeros(2)
    gov = init_governor(traj)
    for step in range(4000):
        u, gov, _ = control_step(q, u_prev, traj, None, FarField(), FarSelf(),
                                 gov, params, mode="pd")
        q = q + params.dt * u
        u_prev = u
        if np.linalg.norm(q - qG) <= 0.05 and gov.s >= 0.999:
            break
    assert gov.s >= 0.999
    assert np.linalg.norm(q - qG) <= 0.05
