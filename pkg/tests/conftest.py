import numpy as np
import pytest

from crowdtrack.models import DynamicsParams, SensorParams

# parameters of the rectangular benchmark scenario
ALPHA = 1 / 15
SIGMA_V = 10.0
TS = 0.125
SIGMA_THETA = 1.0


@pytest.fixture
def dyn():
    return DynamicsParams(ALPHA, SIGMA_V, TS, SIGMA_THETA)


@pytest.fixture
def sensor():
    return SensorParams((0.1, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_relaxed_hull(lo, hi, q, grids):
    """Brute-force q-relaxed hull: grid points inside at least n - q boxes, then their bounding box.

    ``lo``/``hi`` are (n, D); ``grids`` one 1-D coordinate array per dimension.
    Returns (lo, hi) of shape (D,), or None when no grid point qualifies.
    """
    n, D = lo.shape
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, D)
    inside = np.all((mesh[:, None, :] >= lo[None]) & (mesh[:, None, :] <= hi[None]), axis=2)
    keep = mesh[inside.sum(axis=1) >= n - q]
    if keep.shape[0] == 0:
        return None
    return keep.min(axis=0), keep.max(axis=0)


def feasible(states, zlo, zhi, prev_lo=None, prev_hi=None, vb=None):
    """Rows of ``states`` (n, 6) satisfying the measurement constraint with one measurement box.

    A state is feasible when its rectangle meets the measurement box on both
    axes and, given a previous position box, its velocity is reachable from
    some previous position under bounded process noise.
    """
    ok = np.ones(states.shape[0], dtype=bool)
    for axis, (ix, iv, ie) in enumerate(((0, 1, 4), (2, 3, 5))):
        x, v, a = states[:, ix], states[:, iv], states[:, ie]
        ok &= (x - a / 2 <= zhi[axis]) & (x + a / 2 >= zlo[axis])
        if prev_lo is not None:
            # v = decay * (x - x_prev - eta_x) / coupling + eta_v for some x_prev, eta_x, eta_v
            k = vb.decay / vb.coupling
            vmin = k * (x - prev_hi[axis] - vb.pos_noise) - vb.vel_noise
            vmax = k * (x - prev_lo[axis] + vb.pos_noise) + vb.vel_noise
            ok &= (v >= vmin) & (v <= vmax)
    return ok


def random_pair(rng, with_prev):
    """A random (particle box, measurement box, previous position box) triple near one another."""
    centre = rng.uniform(-50, 50, 2)
    lo = np.empty(6)
    hi = np.empty(6)
    for axis, (ix, iv, ie) in enumerate(((0, 1, 4), (2, 3, 5))):
        w = rng.uniform(0.5, 30)
        lo[ix] = centre[axis] - w * rng.random()
        hi[ix] = lo[ix] + w
        lo[iv] = rng.uniform(-10, 5)
        hi[iv] = lo[iv] + rng.uniform(0.1, 10)
        lo[ie] = rng.uniform(0.1, 40)
        hi[ie] = lo[ie] + rng.uniform(0.1, 30)
    reach = 0.5 * (hi[[0, 2]] - lo[[0, 2]]) + 0.5 * hi[[4, 5]]
    zc = centre + rng.uniform(-1.2, 1.2, 2) * reach
    half = rng.uniform(0.05, 2.0, 2)
    zlo, zhi = zc - half, zc + half
    if not with_prev:
        return lo, hi, zlo, zhi, None, None
    plo = centre + rng.uniform(-3, 1, 2)
    phi = plo + rng.uniform(0.1, 4, 2)
    return lo, hi, zlo, zhi, plo, phi


def sample_feasible(rng, lo, hi, zlo, zhi, plo, phi, vb, want=1000, max_draws=200_000):
    """Rejection sampling: uniform states in the box kept when feasible."""
    got = []
    n_got = 0
    drawn = 0
    while n_got < want and drawn < max_draws:
        s = lo + (hi - lo) * rng.random((20_000, 6))
        drawn += s.shape[0]
        keep = s[feasible(s, zlo, zhi, plo, phi, vb)]
        got.append(keep)
        n_got += keep.shape[0]
    out = np.vstack(got) if got else np.empty((0, 6))
    return out[:want]


# one line per acceptance criterion, filled in by test_acceptance and printed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
