"""Crowd state-space model.

State ordering is fixed everywhere as ``(x, x_dot, y, y_dot, a, b)``: centre
position and velocity of the crowd followed by the side lengths of its
bounding rectangle.  The centre follows a correlated-velocity
(Ornstein-Uhlenbeck velocity) model, the sides a random walk.  Crowd
measurements are uniform inside the rectangle plus Gaussian sensor noise;
clutter is uniform in a disc about the crowd centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .intervals import Box

STATE_NAMES = ("x", "x_dot", "y", "y_dot", "a", "b")
STATE_DIM = 6
KIN = np.array([0, 1, 2, 3])
POS = np.array([0, 2])
VEL = np.array([1, 3])
EXT = np.array([4, 5])


@dataclass(frozen=True)
class CrowdState:
    x: float
    x_dot: float
    y: float
    y_dot: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"extent sides must be positive, got a={self.a}, b={self.b}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.y, self.y_dot, self.a, self.b])

    @classmethod
    def from_array(cls, v) -> "CrowdState":
        return cls(*(float(c) for c in np.asarray(v, dtype=float)[:STATE_DIM]))

    @property
    def area(self) -> float:
        return self.a * self.b


@dataclass(frozen=True)
class DynamicsParams:
    """Correlated-velocity centre dynamics plus random-walk extent.

    ``alpha`` is the reciprocal velocity correlation time (1/s), ``sigma_v`` the
    velocity standard deviation (m/s), ``Ts`` the sampling interval (s) and
    ``sigma_theta`` the per-step standard deviation of each side (m).
    """

    alpha: float
    sigma_v: float
    Ts: float
    sigma_theta: float
    extent_floor: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0 or self.Ts <= 0:
            raise ValueError("alpha and Ts must be positive")
        if self.sigma_v < 0 or self.sigma_theta < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def from_time_constant(cls, T_cv: float, sigma_v: float, Ts: float, sigma_theta: float,
                           extent_floor: float = 0.1) -> "DynamicsParams":
        return cls(1.0 / T_cv, sigma_v, Ts, sigma_theta, extent_floor)


@dataclass(frozen=True)
class SensorParams:
    sigma_z: tuple[float, float] = (0.1, 0.1)
    noise_bound_multiplier: float = 3.0

    def __post_init__(self):
        sz = tuple(float(s) for s in np.broadcast_to(self.sigma_z, (2,)))
        object.__setattr__(self, "sigma_z", sz)
        if min(sz) <= 0:
            raise ValueError("sigma_z must be positive")

    @property
    def half_width(self) -> np.ndarray:
        return self.noise_bound_multiplier * np.asarray(self.sigma_z)


@dataclass
class MeasurementSet:
    """One scan: ``points`` (M, 2) and their interval boxes ``lo``/``hi`` (M, 2)."""

    points: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    k: int = 0
    n_crowd: int = field(default=-1, repr=False)  # simulator bookkeeping, never read by filters

    @classmethod
    def from_points(cls, points, sensor: SensorParams, k: int = 0, n_crowd: int = -1) -> "MeasurementSet":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        hw = sensor.half_width
        return cls(pts, pts - hw, pts + hw, k, n_crowd)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def boxes(self) -> list[Box]:
        return [Box(l, h) for l, h in zip(self.lo, self.hi)]


def _cv_coefficients(alpha: float, Ts: float) -> tuple[float, float]:
    u = alpha * Ts
    decay = math.exp(-u)
    coupling = -math.expm1(-u) / alpha
    return coupling, decay


def transition_matrix(p: DynamicsParams) -> np.ndarray:
    """4x4 kinematic transition for ordering (x, x_dot, y, y_dot)."""
    c, e = _cv_coefficients(p.alpha, p.Ts)
    F = np.array([[1.0, c], [0.0, e]])
    return np.kron(np.eye(2), F)


def cv_noise_terms(alpha: float, Ts: float) -> tuple[float, float, float]:
    """(q11, q12, q22) of the correlated-velocity process noise, before the 2*alpha*sigma_v^2 factor."""
    u = alpha * Ts
    if u < 1e-2:
        s = 2 / 3 - u / 2 + 7 * u**2 / 30 - u**3 / 12 + 31 * u**4 / 1260 - u**5 / 160
        q11 = 0.5 * Ts**3 * s
    else:
        q11 = (4 * math.exp(-u) - 3 - math.exp(-2 * u) + 2 * u) / (2 * alpha**3)
    q12 = math.expm1(-u) ** 2 / (2 * alpha**2)
    q22 = -math.expm1(-2 * u) / (2 * alpha)
    return q11, q12, q22


def process_noise_cov(p: DynamicsParams) -> np.ndarray:
    q11, q12, q22 = cv_noise_terms(p.alpha, p.Ts)
    block = 2 * p.alpha * p.sigma_v**2 * np.array([[q11, q12], [q12, q22]])
    return np.kron(np.eye(2), block)


def _noise_factor(p: DynamicsParams) -> np.ndarray:
    """Lower-triangular factor L with L L^T = process_noise_cov(p)."""
    Q = process_noise_cov(p)
    L = np.zeros((4, 4))
    for i in (0, 2):
        q11, q12, q22 = Q[i, i], Q[i, i + 1], Q[i + 1, i + 1]
        if q11 <= 0:
            continue
        l11 = math.sqrt(q11)
        l21 = q12 / l11
        L[i, i] = l11
        L[i + 1, i] = l21
        L[i + 1, i + 1] = math.sqrt(max(q22 - l21 * l21, 0.0))
    return L


def propagate(states: np.ndarray, p: DynamicsParams, rng: np.random.Generator) -> np.ndarray:
    """Sample next states for an (N, 6) array under the crowd dynamics."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = np.empty_like(states)
    A = transition_matrix(p)
    L = _noise_factor(p)
    n = states.shape[0]
    out[:, KIN] = states[:, KIN] @ A.T + rng.standard_normal((n, 4)) @ L.T
    out[:, EXT] = states[:, EXT] + p.sigma_theta * rng.standard_normal((n, 2))
    out[:, EXT] = np.maximum(out[:, EXT], p.extent_floor)
    return out


def step_truth(s: CrowdState, p: DynamicsParams, rng: np.random.Generator) -> CrowdState:
    return CrowdState.from_array(propagate(s.as_array()[None], p, rng)[0])


def crowd_rect(states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper corners (..., 2) of the rectangle occupied by each state."""
    states = np.asarray(states, dtype=float)
    c = states[..., POS]
    h = 0.5 * states[..., EXT]
    return c - h, c + h


def sample_clutter(centre, radius: float, n: int, rng: np.random.Generator,
                   exclude: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """``n`` points uniform in a disc, optionally outside an axis-aligned rectangle."""
    out = np.empty((0, 2))
    centre = np.asarray(centre, dtype=float)
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 8)
        r = radius * np.sqrt(rng.random(m))
        th = 2 * np.pi * rng.random(m)
        pts = centre + np.column_stack([r * np.cos(th), r * np.sin(th)])
        if exclude is not None:
            lo, hi = exclude
            inside = np.all((pts >= lo) & (pts <= hi), axis=1)
            pts = pts[~inside]
        out = np.vstack([out, pts])
    return out[:n]


def generate_measurements(s: CrowdState, lambda_T: float, lambda_C: float, sensor: SensorParams,
                          clutter_radius: float, rng: np.random.Generator, k: int = 0) -> MeasurementSet:
    """One scan from the rectangular crowd model with Poisson counts."""
    if lambda_T < 0 or lambda_C < 0 or clutter_radius <= 0:
        raise ValueError("rates must be >= 0 and clutter_radius > 0")
    lo, hi = crowd_rect(s.as_array())
    n_t = rng.poisson(lambda_T)
    n_c = rng.poisson(lambda_C)
    sources = lo + (hi - lo) * rng.random((n_t, 2))
    crowd = sources + rng.standard_normal((n_t, 2)) * np.asarray(sensor.sigma_z)
    clutter = sample_clutter([s.x, s.y], clutter_radius, n_c, rng, exclude=(lo, hi))
    clutter = clutter + rng.standard_normal((n_c, 2)) * np.asarray(sensor.sigma_z)
    pts = np.vstack([crowd, clutter])
    pts = pts[rng.permutation(pts.shape[0])]
    return MeasurementSet.from_points(pts, sensor, k=k, n_crowd=n_t)


def _gauss_mass(lo, hi, z, sigma):
    """P(lo <= z + N(0, sigma^2) <= hi), evaluated on the accurate tail side."""
    # reflect so both CDF arguments sit on the side where ndtr keeps its precision
    s = np.where(z > 0.5 * (lo + hi), 1.0, -1.0)
    return s * (ndtr(s * (hi - z) / sigma) - ndtr(s * (lo - z) / sigma))


def point_likelihood(z, states, sensor: SensorParams) -> np.ndarray:
    """Density of a crowd measurement at ``z`` given the crowd state.

    Uniform source on the rectangle convolved with the Gaussian sensor noise:
    a product over axes of normal-CDF differences divided by the side length.
    ``z`` has shape (M, 2), ``states`` (N, 6) or (6,); returns (N, M) or (M,).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    st = np.asarray(states.as_array() if isinstance(states, CrowdState) else states, dtype=float)
    single = st.ndim == 1
    st = np.atleast_2d(st)
    lo, hi = crowd_rect(st)
    sig = np.asarray(sensor.sigma_z)
    dens = np.ones((st.shape[0], z.shape[0]))
    for d in range(2):
        mass = _gauss_mass(lo[:, d, None], hi[:, d, None], z[None, :, d], sig[d])
        dens *= mass / st[:, EXT[d], None]
    return dens[0] if single else dens


def r_region(s, sensor: SensorParams) -> Box:
    """Crowd rectangle inflated by the sensor noise bound on each axis."""
    v = s.as_array() if isinstance(s, CrowdState) else np.asarray(s, dtype=float)
    lo, hi = crowd_rect(v)
    hw = sensor.half_width
    return Box(lo - hw, hi + hw)


def r_area(states, sensor: SensorParams) -> np.ndarray:
    """Vectorised ``|r(x)|`` for an (N, 6) array (or (..., 6))."""
    st = np.asarray(states, dtype=float)
    hw = sensor.half_width
    return (st[..., 4] + 2 * hw[0]) * (st[..., 5] + 2 * hw[1])


def source_integral(z, x: float, a: float, sigma: float, square: bool = False) -> np.ndarray:
    """One-dimensional measurement/source integral under bounded sensor noise.

    Integrates U_[z - 3 sigma, z + 3 sigma](h(s)) against a uniform source on
    [x - a/2, x + a/2], with h(s) = s or, when ``square``, h(s) = s^2 (the
    source interval must then be non-negative).  After the change of variable
    the integrand is |h'(s)| / (6 sigma) on h^-1([z - 3 sigma, z + 3 sigma]),
    so the result is the overlap of that window with h(source interval),
    divided by 6 sigma a.
    """
    z = np.asarray(z, dtype=float)
    lo, hi = x - 0.5 * a, x + 0.5 * a
    if square:
        if lo < 0:
            raise ValueError("the squared model needs a non-negative source interval")
        lo, hi = lo * lo, hi * hi
    overlap = np.minimum(z + 3 * sigma, hi) - np.maximum(z - 3 * sigma, lo)
    return np.maximum(overlap, 0.0) / (6 * sigma * a)
