import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdtrack.models import CrowdState, DynamicsParams, SensorParams
from crowdtrack.simulators import (Corridor, CrowdScenario, ForceParams, Pedestrians, RectScenario, crosses_wall,
                                   crowd_sim_measurements, crowd_sim_run, crowd_sim_step, crowd_truth_extract,
                                   init_pedestrians, read_scans_csv, read_truth_csv, rect_sim_run, transit_step,
                                   write_scans_csv, write_truth_csv)

NO_WALLS = np.empty((0, 2, 2))


# --- rectangular object simulator ------------------------------------------------------


def test_rect_default_run_length():
    s = RectScenario()
    truth, scans = rect_sim_run(s, np.random.default_rng(0))
    assert s.n_steps == 320
    assert len(truth) == len(scans) == 320
    assert [Z.k for Z in scans] == list(range(1, 321))


def test_rect_zero_rates_give_empty_scans():
    s = RectScenario(lambda_T=0.0, rho=0.0)
    _, scans = rect_sim_run(s, np.random.default_rng(1))
    assert all(len(Z) == 0 for Z in scans)


def test_rect_mean_count_matches_poisson():
    s = RectScenario()
    truth, scans = rect_sim_run(s, np.random.default_rng(2))
    # E[M_k] = lambda_T + rho * (pi R^2 - a_k b_k); variance equals the mean
    means = np.array([s.lambda_T + s.clutter_rate(t) for t in truth])
    counts = np.array([len(Z) for Z in scans])
    se = math.sqrt(means.mean() / len(scans))
    assert abs(counts.mean() - means.mean()) < 3 * se
    assert s.clutter_rate(CrowdState(0, 0, 0, 0, 40, 40)) == pytest.approx(1e-2 * (math.pi * 1e4 - 1600))


def test_rect_reproducible():
    s = RectScenario()
    t1, z1 = rect_sim_run(s, np.random.default_rng(5))
    t2, z2 = rect_sim_run(s, np.random.default_rng(5))
    assert t1 == t2
    for a, b in zip(z1, z2):
        np.testing.assert_array_equal(a.points, b.points)


def test_rect_noiseless_truth_follows_transition():
    s = RectScenario(dynamics=DynamicsParams(1 / 15, 0.0, 0.125, 0.0),
                     initial=CrowdState(100, 2, 100, -1, 40, 30))
    truth, _ = rect_sim_run(s, np.random.default_rng(0))
    e = math.exp(-0.125 / 15)
    assert truth[-1].x_dot == pytest.approx(2 * e**320)
    # position moves by v0 (1 - e^{-alpha T}) / alpha in total
    assert truth[-1].x == pytest.approx(100 + 2 * 15 * (1 - e**320))
    assert truth[-1].a == 40 and truth[-1].b == 30


# --- pedestrian dynamics ------------------------------------------------------------


def test_single_pedestrian_approaches_goal():
    c = Corridor(NO_WALLS, np.array([[50.0, 0.0]]))
    f = ForceParams()
    peds = Pedestrians(np.array([[0.0, 0.0]]), np.zeros((1, 2)))
    dist = [50.0]
    for _ in range(100):
        peds = crowd_sim_step(peds, c, f)
        dist.append(float(np.hypot(*(c.goals[0] - peds.pos[0]))))
        assert np.linalg.norm(peds.vel[0]) <= f.max_speed + 1e-12
    assert np.all(np.diff(dist) < 0)
    # the speed saturates after max_speed / k_goal seconds
    assert np.linalg.norm(peds.vel[0]) == pytest.approx(f.max_speed)
    assert peds.pos[0, 1] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 4.9), st.floats(0, 2 * math.pi))
def test_repulsion_pushes_apart(d, theta):
    c = Corridor(NO_WALLS, np.empty((0, 2)))
    f = ForceParams(k_goal=0.0)
    u = np.array([math.cos(theta), math.sin(theta)])
    peds = Pedestrians(np.array([[0.0, 0.0], d * u]), np.zeros((2, 2)))
    out = crowd_sim_step(peds, c, f)
    assert np.linalg.norm(out.pos[1] - out.pos[0]) > d
    # beyond the cutoff nothing happens
    far = Pedestrians(np.array([[0.0, 0.0], 5.5 * u]), np.zeros((2, 2)))
    np.testing.assert_array_equal(crowd_sim_step(far, c, f).pos, far.pos)


def test_crosses_wall_cases():
    walls = np.array([[[0.0, -1.0], [0.0, 1.0]]])
    p0 = np.array([[-1.0, 0.0], [-1.0, 0.0], [-1.0, 2.0]])
    p1 = np.array([[1.0, 0.0], [-0.5, 0.0], [1.0, 2.0]])
    np.testing.assert_array_equal(crosses_wall(p0, p1, walls)[:, 0], [True, False, False])


def test_pedestrian_never_tunnels_through_wall():
    # a walker running straight at a wall with its goal behind it
    walls = np.array([[[5.0, -10.0], [5.0, 10.0]]])
    c = Corridor(walls, np.array([[20.0, 0.0]]))
    f = ForceParams(k_ped=0.0)
    peds = Pedestrians(np.array([[0.0, 0.3]]), np.array([[2.0, 0.0]]))
    for _ in range(200):
        new = crowd_sim_step(peds, c, f)
        assert not crosses_wall(peds.pos, new.pos, walls).any()
        peds = new
    assert peds.pos[0, 0] < 5.0


def test_bottleneck_run():
    s = CrowdScenario()
    truth, scans, positions = crowd_sim_run(s, np.random.default_rng(3), keep_positions=True)
    walls = s.corridor.walls
    for p0, p1 in zip(positions[:-1], positions[1:]):
        assert not crosses_wall(p0, p1, walls).any()
    # everyone is through the gap before the end of the 150 s run
    k_all = transit_step(positions, s.corridor.gap_x, fraction=1.0)
    assert 0 < k_all <= s.n_steps
    k_half = transit_step(positions, s.corridor.gap_x)
    assert 0 < k_half < k_all
    length = walls[..., 0].max() - walls[..., 0].min()
    width = walls[..., 1].max() - walls[..., 1].min()
    for t in truth:
        assert 0 < t.a <= length and 0 < t.b <= width
    assert all(Z.n_crowd == 100 for Z in scans)


def test_init_pedestrians_spacing():
    peds = init_pedestrians(100, (0, 0), (20, 20), np.random.default_rng(0))
    d = np.linalg.norm(peds.pos[:, None] - peds.pos[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 0.8
    assert np.all(np.abs(peds.pos) <= 10)
    assert np.all(peds.vel == 0)


# --- extraction and measurements --------------------------------------------------


def test_extract_single_pedestrian():
    s = crowd_truth_extract(np.array([[3.0, -4.0]]))
    assert s == CrowdState(3.0, 0.0, -4.0, 0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        crowd_truth_extract(np.empty((0, 2)))


def test_extract_corners_and_velocity():
    corners = np.array([[0, 0], [10, 0], [0, 20], [10, 20.0]])
    s = crowd_truth_extract(corners)
    assert (s.x, s.y, s.a, s.b) == (5, 10, 10, 20)
    moved = crowd_truth_extract(corners + [1.0, -0.5], prev=s, Ts=0.125)
    assert (moved.x_dot, moved.y_dot) == (8.0, -4.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_extract_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-30, 30, (rng.integers(1, 40), 2))
    assert crowd_truth_extract(pos) == crowd_truth_extract(pos[rng.permutation(len(pos))])


def test_measurements_noiseless_no_clutter():
    rng = np.random.default_rng(0)
    peds = init_pedestrians(30, (0, 0), (20, 20), rng)
    # boxes need a positive width, so "zero" noise is a negligible sigma
    Z = crowd_sim_measurements(peds, SensorParams((1e-12, 1e-12)), 0.0, 100.0, rng)
    got = Z.points[np.lexsort(Z.points.T)]
    want = peds.pos[np.lexsort(peds.pos.T)]
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_measurement_boxes_contain_points():
    rng = np.random.default_rng(1)
    peds = init_pedestrians(50, (0, 0), (20, 20), rng)
    Z = crowd_sim_measurements(peds, SensorParams((0.1, 0.1)), 1e-3, 100.0, rng)
    assert np.all((Z.lo <= Z.points) & (Z.points <= Z.hi))


def test_measurement_count_poisson():
    rng = np.random.default_rng(2)
    peds = init_pedestrians(100, (0, 0), (20, 20), rng)
    sensor = SensorParams((0.1, 0.1))
    n = 2000
    counts = np.array([len(crowd_sim_measurements(peds, sensor, 1e-3, 100.0, rng)) for _ in range(n)])
    lam = 1e-3 * math.pi * 1e4
    assert counts.min() >= 100
    assert abs(counts.mean() - (100 + lam)) < 3 * math.sqrt(lam / n)
    assert counts.var() == pytest.approx(lam, rel=0.15)


# --- CSV ---------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    s = RectScenario(T_tot=2.0)
    truth, scans = rect_sim_run(s, np.random.default_rng(4))
    write_truth_csv(tmp_path / "truth.csv", truth)
    write_scans_csv(tmp_path / "scans.csv", scans)
    assert read_truth_csv(tmp_path / "truth.csv") == truth
    back = read_scans_csv(tmp_path / "scans.csv", s.sensor)
    assert len(back) == len(scans)
    for a, b in zip(back, scans):
        assert a.k == b.k
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.lo, b.lo)
    header = (tmp_path / "truth.csv").read_text().splitlines()[0]
    assert header == "k,x,xdot,y,ydot,a,b"
    assert (tmp_path / "scans.csv").read_text().splitlines()[0] == "k,z1,z2"


@pytest.mark.parametrize("seed", range(6))
def test_every_walker_gets_through(seed):
    # a gap narrower than twice the wall cutoff once trapped a walker oscillating at its mouth
    s = CrowdScenario()
    _, _, positions = crowd_sim_run(s, np.random.default_rng([seed, 17]), keep_positions=True)
    assert 0 < transit_step(positions, s.corridor.gap_x, fraction=1.0) <= s.n_steps
