import numpy as np
import pytest

from cdf_barrier.kinematics import ArmModel, arm_sdf, forward_kinematics
from cdf_barrier.oracle import (
    UNREACHABLE_CDF,
    build_selfcollision_db,
    cdf_value_grad,
    cdf_values,
    cell_cdf,
    exact_cdf,
    exact_scdf,
    load_contact_db,
    load_selfcollision_db,
    save_contact_db,
    save_selfcollision_db,
    scdf_value_grad,
    scdf_values,
)

from helpers import brute_cdf_2link, brute_scdf_2link, finite_difference_grad


def test_tip_grid_point_has_stretched_contact(contact_db):
    cell = contact_db.cell_index(np.array([[4.0, 0.0]]))[0]
    s, e = contact_db.offsets[cell], contact_db.offsets[cell + 1]
    assert e > s
    entries = contact_db.configs[s:e]
    d = np.linalg.norm(entries - np.zeros(2), axis=1)
    assert d.min() < 0.05


def test_unreachable_grid_point_empty(contact_db):
    cell = contact_db.cell_index(np.array([[5.0, 0.0]]))[0]
    s, e = contact_db.offsets[cell], contact_db.offsets[cell + 1]
    assert e == s


def test_top_of_reach_entries_all_stretched(contact_db):
    # only fully extended configurations reach a distance-4 point
    cell = contact_db.cell_index(np.array([[0.0, 4.0]]))[0]
    s, e = contact_db.offsets[cell], contact_db.offsets[cell + 1]
    assert e > s
    entries = contact_db.configs[s:e]
    ref = np.array([np.pi / 2, 0.0])
    assert np.all(np.linalg.norm(entries - ref, axis=1) < 0.08)


def test_exact_cdf_contact_zero(contact_db):
    assert exact_cdf(contact_db, np.array([4.0, 0.0]), np.zeros(2)) <= 0.02


def test_exact_cdf_quarter_turn(contact_db):
    v = exact_cdf(contact_db, np.array([0.0, 4.0]), np.zeros(2))
    assert v == pytest.approx(np.pi / 2, abs=0.05)
    brute = brute_cdf_2link(contact_db.arm, np.array([0.0, 4.0]), np.zeros(2))
    assert v == pytest.approx(brute, abs=0.05)


def test_exact_cdf_unreachable_sentinel(contact_db):
    assert exact_cdf(contact_db, np.array([5.0, 0.0]), np.zeros(2)) == UNREACHABLE_CDF


def test_exact_cdf_out_of_bounds_raises(contact_db):
    with pytest.raises(ValueError):
        exact_cdf(contact_db, np.array([5.6, 0.0]), np.zeros(2))


def test_cdf_matches_brute_force_randomly(contact_db):
    rng = np.random.default_rng(3)
    pts = contact_db.grid_points()
    reach = contact_db.arm.reach
    checked = 0
    for _ in range(40):
        p = pts[rng.integers(len(pts))]
        if np.linalg.norm(p) > reach - 0.3 or np.linalg.norm(p) < 0.3:
            continue
        q = rng.uniform(-np.pi, np.pi, size=2)
        v = exact_cdf(contact_db, p, q)
        b = brute_cdf_2link(contact_db.arm, p, q)
        assert v == pytest.approx(b, abs=0.12), (p, q)
        assert v >= b - 0.01  # database is (nearly) a subset of the true contact set
        checked += 1
    assert checked > 10


def test_cdf_batch_matches_single(contact_db):
    rng = np.random.default_rng(4)
    pts = rng.uniform(-4.5, 4.5, size=(30, 2))
    q = rng.uniform(-np.pi, np.pi, size=2)
    vals, best = cdf_values(contact_db, pts, q)
    for i, p in enumerate(pts):
        assert vals[i] == pytest.approx(exact_cdf(contact_db, p, q), abs=1e-12)
    reachable = vals < UNREACHABLE_CDF
    assert np.all(best[reachable] >= 0)


def test_cdf_lipschitz_in_q(contact_db):
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = rng.uniform(-4, 4, size=2)
        q1 = rng.uniform(-np.pi, np.pi, size=2)
        q2 = rng.uniform(-np.pi, np.pi, size=2)
        v1 = exact_cdf(contact_db, p, q1)
        v2 = exact_cdf(contact_db, p, q2)
        if v1 >= UNREACHABLE_CDF:
            assert v2 >= UNREACHABLE_CDF
            continue
        assert abs(v1 - v2) <= np.linalg.norm(q1 - q2) + 1e-9


def test_zero_consistency_touching_configs(contact_db):
    # a configuration touching a grid point has (near-)zero CDF there
    from helpers import analytic_contacts_2link

    arm = contact_db.arm
    rng = np.random.default_rng(6)
    nodes = contact_db.grid_points()
    hits = 0
    for _ in range(40):
        node = nodes[rng.integers(len(nodes))]
        if np.linalg.norm(node) > arm.reach - 0.1 or np.linalg.norm(node) < 0.1:
            continue
        configs, _ = analytic_contacts_2link(arm, node)
        q = configs[rng.integers(len(configs))]
        assert abs(arm_sdf(arm, node, q)) < 1e-6
        v = exact_cdf(contact_db, node, q)
        assert v <= contact_db.db_tol + 0.08
        hits += 1
    assert hits > 10


def test_refined_leq_full(contact_db):
    rng = np.random.default_rng(7)
    pts = contact_db.grid_points()
    for _ in range(30):
        cell = rng.integers(contact_db.n_cells)
        s, e = contact_db.offsets[cell], contact_db.offsets[cell + 1]
        if e == s:
            continue
        q = rng.uniform(-np.pi, np.pi, size=2)
        entries = contact_db.configs[s:e]
        full = np.linalg.norm(q[None, :] - entries, axis=1).min()
        refined = exact_cdf(contact_db, pts[cell], q)
        assert refined <= full + 1e-9


def test_cdf_eikonal_finite_difference(contact_db):
    rng = np.random.default_rng(8)
    pts = contact_db.grid_points()
    reachable = contact_db.reachable_cells()
    ok = 0
    total = 0
    while total < 200:
        cell = reachable[rng.integers(len(reachable))]
        q = rng.uniform(-np.pi + 0.01, np.pi - 0.01, size=2)
        v = exact_cdf(contact_db, pts[cell], q)
        if not (0.1 < v < 1.0):
            continue
        total += 1
        g = finite_difference_grad(lambda x: exact_cdf(contact_db, pts[cell], x), q)
        if 0.85 <= np.linalg.norm(g) <= 1.05:
            ok += 1
    assert ok / total >= 0.95


def test_cdf_analytic_grad_matches_fd(contact_db):
    rng = np.random.default_rng(9)
    pts = contact_db.grid_points()
    reachable = contact_db.reachable_cells()
    done = 0
    while done < 30:
        cell = reachable[rng.integers(len(reachable))]
        p = pts[cell]
        q = rng.uniform(-np.pi + 0.01, np.pi - 0.01, size=2)
        v, g = cdf_value_grad(contact_db, p, q)
        if not (0.1 < v < 2.0):
            continue
        fd = finite_difference_grad(lambda x: exact_cdf(contact_db, p, x), q)
        if np.linalg.norm(fd - g) > 1e-4:  # straddled a min-switch ridge
            continue
        np.testing.assert_allclose(g, fd, atol=1e-4)
        done += 1


def test_cell_cdf_matches_exact(contact_db):
    rng = np.random.default_rng(10)
    cell = contact_db.reachable_cells()[5]
    node = contact_db.grid_points()[cell]
    Q = rng.uniform(-np.pi, np.pi, size=(20, 2))
    vals = cell_cdf(contact_db, cell, Q)
    for q, v in zip(Q, vals):
        assert v == pytest.approx(exact_cdf(contact_db, node, q), abs=1e-12)


def test_contact_db_roundtrip(tmp_path, contact_db):
    path = tmp_path / "db.json"
    save_contact_db(contact_db, path)
    db2 = load_contact_db(path)
    assert db2.shape == contact_db.shape
    np.testing.assert_allclose(db2.configs, contact_db.configs)
    np.testing.assert_array_equal(db2.offsets, contact_db.offsets)
    np.testing.assert_array_equal(db2.links, contact_db.links)


# ----------------------------------------------------------------------------
# self-collision database


def test_scdf_kept_configs_are_folds(scdf_db):
    assert not scdf_db.empty
    q2 = scdf_db.configs[:, 1]
    assert np.all(np.pi - np.abs(q2) <= 0.05)
    assert np.all(scdf_db.pair_a == 1)
    assert np.all(scdf_db.pair_b == 2)


def test_scdf_one_link_empty():
    arm = ArmModel(link_lengths=[1.0])
    db = build_selfcollision_db(arm, n_samples=10_000, seed=0)
    assert db.empty
    assert exact_scdf(db, np.array([0.3])) == UNREACHABLE_CDF


def test_scdf_deterministic(arm2):
    a = build_selfcollision_db(arm2, n_samples=30_000, seed=11)
    b = build_selfcollision_db(arm2, n_samples=30_000, seed=11)
    np.testing.assert_array_equal(a.configs, b.configs)


def test_scdf_at_origin(scdf_db):
    v = exact_scdf(scdf_db, np.zeros(2))
    assert v == pytest.approx(np.pi, abs=0.05)


def test_scdf_member_zero(scdf_db):
    q = scdf_db.configs[17]
    assert exact_scdf(scdf_db, q) <= 1e-9


def test_scdf_near_fold(scdf_db):
    q = np.array([1.0, np.pi - 0.1])
    v = exact_scdf(scdf_db, q)
    assert v == pytest.approx(0.1, abs=0.06)
    assert v == pytest.approx(brute_scdf_2link(q), abs=0.06)


def test_scdf_batch_matches_single(scdf_db):
    rng = np.random.default_rng(12)
    Q = rng.uniform(-np.pi, np.pi, size=(25, 2))
    vals = scdf_values(scdf_db, Q)
    for q, v in zip(Q, vals):
        assert v == pytest.approx(exact_scdf(scdf_db, q), abs=1e-12)


def test_scdf_eikonal_fd(scdf_db):
    rng = np.random.default_rng(13)
    ok = total = 0
    while total < 200:
        q = rng.uniform(-np.pi + 0.02, np.pi - 0.02, size=2)
        v = exact_scdf(scdf_db, q)
        if not (0.1 < v < 1.0):
            continue
        total += 1
        g = finite_difference_grad(lambda x: exact_scdf(scdf_db, x), q)
        if 0.85 <= np.linalg.norm(g) <= 1.05:
            ok += 1
    assert ok / total >= 0.95


def test_scdf_grad_matches_fd(scdf_db):
    rng = np.random.default_rng(14)
    done = 0
    while done < 20:
        q = rng.uniform(-np.pi + 0.02, np.pi - 0.02, size=2)
        v, g = scdf_value_grad(scdf_db, q)
        if not (0.1 < v < 2.0):
            continue
        fd = finite_difference_grad(lambda x: exact_scdf(scdf_db, x), q)
        if np.linalg.norm(fd - g) > 1e-4:
            continue
        np.testing.assert_allclose(g, fd, atol=1e-4)
        done += 1


def test_scdf_db_roundtrip(tmp_path, scdf_db):
    path = tmp_path / "sc.json"
    save_selfcollision_db(scdf_db, path)
    db2 = load_selfcollision_db(path)
    np.testing.assert_allclose(db2.configs, scdf_db.configs)
    np.testing.assert_array_equal(db2.pair_a, scdf_db.pair_a)
