import numpy as np
import pytest

from cdf_barrier.control import ControlParams
from cdf_barrier.kinematics import two_link_arm
from cdf_barrier.planner import PlannerParams, RrtParams
from cdf_barrier.sim import (
    Obstacle,
    Scenario,
    SensorSpec,
    execute_episode,
    frechet_distance,
    obstacles_at,
    oracle_fields,
    oracle_margin,
    plan_scenario,
    random_scenario,
    resample_polyline,
    run_episode,
    self_clearance,
    sense,
)


@pytest.fixture(scope="module")
def fields(contact_db, scdf_db):
    return oracle_fields(contact_db, scdf_db)


def simple_scenario(dynamic=False, seed=3, n_points=40):
    arm = two_link_arm()
    vel = np.array([0.4, -0.2]) if dynamic else np.zeros(2)
    obstacles = [
        Obstacle(center=np.array([2.5, 2.5]), radius=0.5, velocity=vel.copy()),
        Obstacle(center=np.array([-2.5, 2.0]), radius=0.4, velocity=np.zeros(2)),
    ]
    return Scenario(arm=arm, obstacles=obstacles, q0=np.zeros(2),
                    goal_target=np.array([-2.0, -2.0]),
                    sensor=SensorSpec(n_points=n_points), duration=40.0, seed=seed)


# ------------------------------------------------------------------ sensing


def test_sense_points_on_circles_when_noiseless():
    sc = simple_scenario()
    sc.sensor = SensorSpec(n_points=30, noise_sigma=0.0, velocity_noise_sigma=0.0)
    cloud = sense(sc, 0.0)
    assert len(cloud) == 30
    d0 = np.linalg.norm(cloud.points - sc.obstacles[0].center, axis=1)
    d1 = np.linalg.norm(cloud.points - sc.obstacles[1].center, axis=1)
    on0 = np.abs(d0 - sc.obstacles[0].radius) < 1e-9
    on1 = np.abs(d1 - sc.obstacles[1].radius) < 1e-9
    assert np.all(on0 | on1)


def test_sense_static_velocities_near_zero():
    sc = simple_scenario(dynamic=False)
    cloud = sense(sc, 1.0)
    assert np.all(np.linalg.norm(cloud.velocities, axis=1) < 5 * sc.sensor.velocity_noise_sigma + 1e-9)


def test_sense_deterministic():
    sc = simple_scenario(dynamic=True)
    a = sense(sc, 0.5)
    b = sense(sc, 0.5)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.velocities, b.velocities)


def test_sense_nominal_speed_substitution():
    sc = simple_scenario(dynamic=True)
    sc.sensor = SensorSpec(n_points=20, noise_sigma=0.0, velocity_noise_sigma=0.0, nominal_speed=0.5)
    cloud = sense(sc, 0.0)
    true_v = sc.obstacles[0].velocity
    moving = np.linalg.norm(cloud.velocities, axis=1) > 1e-9
    speeds = np.linalg.norm(cloud.velocities[moving], axis=1)
    np.testing.assert_allclose(speeds, 0.5, atol=1e-9)
    dirs = cloud.velocities[moving] / speeds[:, None]
    expected = np.tile(true_v / np.linalg.norm(true_v), (dirs.shape[0], 1))
    np.testing.assert_allclose(dirs, expected, atol=1e-9)


def test_obstacle_reflection_stays_in_bounds():
    sc = simple_scenario(dynamic=True)
    for t in np.linspace(0, 120, 60):
        for o in obstacles_at(sc, t):
            assert np.all(o.center - o.radius >= sc.bounds_lo - 1e-9)
            assert np.all(o.center + o.radius <= sc.bounds_hi + 1e-9)


def test_obstacle_velocity_consistent_with_positions():
    sc = simple_scenario(dynamic=True)
    dt = 1e-5
    for t in (0.3, 7.9, 23.4):
        a = obstacles_at(sc, t)[0]
        b = obstacles_at(sc, t + dt)[0]
        fd = (b.center - a.center) / dt
        np.testing.assert_allclose(fd, a.velocity, atol=1e-3)


# ------------------------------------------------------------------ frechet


def test_frechet_identical_zero():
    path = np.random.default_rng(0).normal(size=(50, 2))
    assert frechet_distance(path, path) == 0.0


def test_frechet_single_points():
    a = np.array([[0.0, 0.0]])
    b = np.array([[3.0, 4.0]])
    assert frechet_distance(a, b) == pytest.approx(5.0)


def test_frechet_parallel_segments():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert frechet_distance(a, b) == pytest.approx(1.0)


def test_frechet_symmetry_and_endpoint_bound():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(20, 2))
    b = rng.normal(size=(25, 2))
    d1 = frechet_distance(a, b)
    d2 = frechet_distance(b, a)
    assert d1 == pytest.approx(d2)
    assert d1 >= max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1])) - 1e-12


def test_resample_polyline_preserves_endpoints():
    path = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]])
    r = resample_polyline(path, 50)
    np.testing.assert_allclose(r[0], path[0])
    np.testing.assert_allclose(r[-1], path[-1])
    assert r.shape == (50, 2)


# ------------------------------------------------------------------ margins


def test_oracle_margin_detects_touch():
    arm = two_link_arm()
    obs = [Obstacle(center=np.array([2.0, 0.3]), radius=0.3, velocity=np.zeros(2))]
    assert oracle_margin(arm, obs, np.zeros(2)) <= 1e-9
    obs2 = [Obstacle(center=np.array([2.0, 2.0]), radius=0.3, velocity=np.zeros(2))]
    assert oracle_margin(arm, obs2, np.zeros(2)) > 0


def test_self_clearance_fold():
    arm = two_link_arm()
    assert self_clearance(arm, np.array([0.2, np.pi])) <= 0
    assert self_clearance(arm, np.zeros(2)) > 0.5


# ------------------------------------------------------------------ episodes


def test_obstacle_free_episode_tracks_well(fields):
    env, sc_field = fields
    arm = two_link_arm()
    scenario = Scenario(arm=arm, obstacles=[], q0=np.zeros(2),
                        goal_target=np.array([-2.0, 2.0]), duration=40.0, seed=0)
    res = run_episode(scenario, "bubble", "pd", env, sc_field)
    assert res.success
    assert res.frechet_error <= 0.05
    assert res.min_oracle_barrier > 0


def test_static_episode_dr_cbf_succeeds(fields):
    env, sc_field = fields
    scenario = simple_scenario(seed=5)
    params = ControlParams(M2=1)
    res = run_episode(scenario, "bubble", "dr_cbf", env, sc_field, control_params=params)
    assert res.success, res.failure_cause
    assert res.min_oracle_barrier > 0


def test_rrt_plan_and_track(fields):
    env, sc_field = fields
    scenario = simple_scenario(seed=6)
    traj, stats, goals, gi = plan_scenario(scenario, "rrt", env, sc_field,
                                           rrt_params=RrtParams(seed=1, max_nodes=3000))
    assert traj is not None and stats.success
    res = execute_episode(scenario, traj, goals[gi], "pd", env, sc_field)
    assert res.steps > 0


def test_planner_failure_reported(fields):
    env, sc_field = fields
    arm = two_link_arm()
    # goal buried inside an obstacle: both IK solutions unsafe
    obstacles = [Obstacle(center=np.array([0.0, 3.0]), radius=0.9, velocity=np.zeros(2))]
    scenario = Scenario(arm=arm, obstacles=obstacles, q0=np.zeros(2),
                        goal_target=np.array([0.0, 3.0]), duration=10.0, seed=1)
    res = run_episode(scenario, "bubble", "pd", env, sc_field,
                      planner_params=PlannerParams(seed=0, n_max=150))
    assert not res.success
    assert res.failure_cause == "planner"


def test_random_scenario_respects_invariants(fields):
    env, sc_field = fields
    arm = two_link_arm()
    for seed in range(4):
        scenario = random_scenario(arm, env, sc_field, seed=seed, dynamic=(seed % 2 == 1))
        assert len(scenario.obstacles) == 4
        assert oracle_margin(arm, scenario.obstacles, scenario.q0) > 0
        goals = scenario.goals()
        assert goals
        ee0 = np.array([4.0, 0.0])
        assert np.linalg.norm(scenario.goal_target - ee0) >= 4.0
        if seed % 2 == 1:
            speeds = [np.linalg.norm(o.velocity) for o in scenario.obstacles]
            assert all(s > 0 for s in speeds)


def test_episode_deterministic(fields):
    env, sc_field = fields
    scenario = simple_scenario(dynamic=True, seed=9)
    params = ControlParams(M2=1)
    r1 = run_episode(scenario, "bubble", "cbf", env, sc_field, control_params=params)
    r2 = run_episode(scenario, "bubble", "cbf", env, sc_field, control_params=params)
    assert r1.success == r2.success
    assert r1.frechet_error == r2.frechet_error
    assert r1.min_oracle_barrier == r2.min_oracle_barrier
    assert r1.steps == r2.steps
