"""Box particle filter for a rectangular crowd.

Each particle is a 6-D box over ``(x, x_dot, y, y_dot, a, b)`` with a weight.
A step is: interval prediction through the dynamics, contraction of every
particle against every measurement box, a q-relaxed intersection of the
consistent contractions, the weight update, and resampling by subdivision.

The particle population is kept as arrays (``BoxParticleSet``) so contraction
runs over all (particle, measurement) pairs at once.  ``contract`` is the
single-pair version written directly with ``Interval`` operations; the test
suite checks the two agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .intervals import Box, Interval, RelaxedSweep, affine_image, div_extended, hull
from .models import (EXT, KIN, POS, VEL, CrowdState, DynamicsParams, MeasurementSet,
                     SensorParams, _cv_coefficients, process_noise_cov, r_area, transition_matrix)
from .rates import RatePosterior, rate_mean, rate_update
from .resampling import effective_sample_size, normalize_log_weights, systematic_counts

MIN_WIDTH = 1e-9


@dataclass
class BoxParticle:
    support: Box
    weight: float
    prev_pos: Box | None = None


@dataclass
class BoxParticleSet:
    lo: np.ndarray  # (N, 6)
    hi: np.ndarray
    w: np.ndarray  # (N,)
    prev_lo: np.ndarray  # (N, 2) previous combined (x, y) box
    prev_hi: np.ndarray
    has_prev: np.ndarray  # (N,) bool

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def particles(self) -> list[BoxParticle]:
        out = []
        for i in range(self.n):
            prev = Box(self.prev_lo[i], self.prev_hi[i]) if self.has_prev[i] else None
            out.append(BoxParticle(Box(self.lo[i], self.hi[i]), float(self.w[i]), prev))
        return out

    @classmethod
    def from_particles(cls, particles: list[BoxParticle]) -> "BoxParticleSet":
        n = len(particles)
        prev_lo = np.zeros((n, 2))
        prev_hi = np.zeros((n, 2))
        has_prev = np.zeros(n, dtype=bool)
        for i, p in enumerate(particles):
            if p.prev_pos is not None:
                prev_lo[i], prev_hi[i], has_prev[i] = p.prev_pos.lo, p.prev_pos.hi, True
        return cls(np.array([p.support.lo for p in particles]), np.array([p.support.hi for p in particles]),
                   np.array([p.weight for p in particles], dtype=float), prev_lo, prev_hi, has_prev)

    def copy(self) -> "BoxParticleSet":
        return BoxParticleSet(self.lo.copy(), self.hi.copy(), self.w.copy(), self.prev_lo.copy(),
                              self.prev_hi.copy(), self.has_prev.copy())


@dataclass
class ContractionOutcome:
    lo: np.ndarray  # (N, M, 6) per-measurement contractions
    hi: np.ndarray
    exists: np.ndarray  # (N, M) bool: the existing sets S_E
    comb_lo: np.ndarray  # (N, 6)
    comb_hi: np.ndarray
    q_used: np.ndarray  # (N,)

    @property
    def se_sizes(self) -> np.ndarray:
        return self.exists.sum(axis=1)


def bpf_init(prior: Box, N: int) -> BoxParticleSet:
    """Partition ``prior`` into ``N`` equal-volume boxes by repeated widest-dimension splits."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if prior.is_empty:
        raise ValueError("prior box is empty")
    boxes = [(prior.lo.copy(), prior.hi.copy(), N)]
    leaves = []
    while boxes:
        lo, hi, n = boxes.pop(0)
        if n == 1:
            leaves.append((lo, hi))
            continue
        f = _smallest_factor(n)
        d = int(np.argmax(hi - lo))
        cuts = np.linspace(lo[d], hi[d], f + 1)
        cuts[-1] = hi[d]
        for j in range(f):
            clo, chi = lo.copy(), hi.copy()
            clo[d], chi[d] = cuts[j], cuts[j + 1]
            boxes.append((clo, chi, n // f))
    lo = np.array([l for l, _ in leaves])
    hi = np.array([h for _, h in leaves])
    return BoxParticleSet(lo, hi, np.full(N, 1.0 / N), np.zeros((N, 2)), np.zeros((N, 2)),
                          np.zeros(N, dtype=bool))


def _smallest_factor(n: int) -> int:
    for f in range(2, int(math.isqrt(n)) + 1):
        if n % f == 0:
            return f
    return n


def bpf_predict(ps: BoxParticleSet, p: DynamicsParams, noise_multiplier: float = 3.0) -> BoxParticleSet:
    """Interval prediction: ``A [x] + [eta]`` on the kinematics, ``+-k sigma_theta`` on the extent."""
    out = ps.copy()
    A = transition_matrix(p)
    nb = noise_multiplier * np.sqrt(np.diag(process_noise_cov(p)))
    klo, khi = affine_image(ps.lo[:, KIN], ps.hi[:, KIN], A)
    out.lo[:, KIN] = klo - nb
    out.hi[:, KIN] = khi + nb
    eb = noise_multiplier * p.sigma_theta
    out.lo[:, EXT] = np.maximum(ps.lo[:, EXT] - eb, p.extent_floor)
    out.hi[:, EXT] = np.maximum(ps.hi[:, EXT] + eb, p.extent_floor)
    return out


@dataclass(frozen=True)
class VelocityBounds:
    """Constants of the backward velocity contractor."""

    coupling: float  # (1 - exp(-alpha Ts)) / alpha
    decay: float  # exp(-alpha Ts)
    pos_noise: float  # half-width of the position noise bound
    vel_noise: float  # half-width of the velocity noise bound

    @classmethod
    def from_params(cls, p: DynamicsParams, noise_multiplier: float = 3.0) -> "VelocityBounds":
        c, e = _cv_coefficients(p.alpha, p.Ts)
        Q = process_noise_cov(p)
        return cls(c, e, noise_multiplier * math.sqrt(Q[0, 0]), noise_multiplier * math.sqrt(Q[1, 1]))


def _velocity_scalar(v: Interval, x: Interval, prev: Interval, vb: VelocityBounds) -> Interval:
    eta_x = Interval(-vb.pos_noise, vb.pos_noise)
    eta_v = Interval(-vb.vel_noise, vb.vel_noise)
    back = (x - prev - eta_x) / Interval.point(vb.coupling)
    return v & (Interval.point(vb.decay) * back + eta_v)


def _extent_scalar(a: Interval, z: Interval, x: Interval) -> Interval:
    # a in +-2 (z - x) / [0, 1]: keep each signed piece that meets [a]
    d = z - x
    unit = Interval(0.0, 1.0)
    pieces = []
    for sign in (1.0, -1.0):
        for piece in div_extended(d, unit):
            scaled = Interval.point(2.0 * sign) * piece
            pieces.append(a & scaled)
    return hull(pieces)


def contract(particle: BoxParticle, z_box: Box, p: DynamicsParams, max_iter: int = 10,
             tol: float = 1e-6, noise_multiplier: float = 3.0) -> Box:
    """Contract one box particle against one measurement box.

    Each axis carries the constraint ``z in [x - a/2, x + a/2]`` (the source lies
    in the crowd rectangle and inside the measurement box).  Position, velocity,
    extent and measurement intervals are contracted in turn and the sweep is
    repeated until nothing shrinks by more than ``tol`` (relative) or
    ``max_iter`` sweeps elapse.  Returns an empty box when the pair is
    inconsistent.
    """
    s = particle.support
    if s.is_empty or z_box.is_empty:
        return Box.empty(6)
    vb = VelocityBounds.from_params(p, noise_multiplier)
    iv = s.intervals()
    z = z_box.intervals()
    prev = particle.prev_pos.intervals() if particle.prev_pos is not None else None
    half = Interval(0.0, 0.5)
    sym = Interval(-1.0, 1.0)
    for _ in range(max_iter):
        before = [(i.lo, i.hi) for i in iv]
        for axis, (ix, iv_, ie) in enumerate(((0, 1, 4), (2, 3, 5))):
            x, v, a, zz = iv[ix], iv[iv_], iv[ie], z[axis]
            x = x & (zz - a * half * sym)
            if prev is not None and not x.is_empty:
                v = _velocity_scalar(v, x, prev[axis], vb)
            if not x.is_empty:
                a = _extent_scalar(a, zz, x)
            zz = zz & (x + a * half * sym)
            iv[ix], iv[iv_], iv[ie], z[axis] = x, v, a, zz
        if any(i.is_empty for i in iv) or any(i.is_empty for i in z):
            return Box.empty(6)
        if _converged(before, iv, tol):
            break
    return Box.from_intervals(iv)


def _converged(before, after, tol) -> bool:
    for (lo, hi), iv in zip(before, after):
        w = hi - lo
        if (iv.lo - lo) > tol * max(w, 1e-300) or (hi - iv.hi) > tol * max(w, 1e-300):
            return False
    return True


def contract_all(lo: np.ndarray, hi: np.ndarray, zlo: np.ndarray, zhi: np.ndarray,
                 prev_lo: np.ndarray, prev_hi: np.ndarray, has_prev: np.ndarray,
                 vb: VelocityBounds, max_iter: int = 10, tol: float = 1e-6):
    """Vectorised ``contract`` over every (particle, measurement) pair.

    Shapes: ``lo``/``hi`` (N, 6), ``zlo``/``zhi`` (M, 2), ``prev_*`` (N, 2).
    Returns (clo, chi, ok) with clo/chi of shape (N, M, 6) and ok (N, M).
    """
    N, M = lo.shape[0], zlo.shape[0]
    shape = (N, M)
    cl = np.empty((N, M, 6))
    ch = np.empty((N, M, 6))
    for d in range(6):
        cl[:, :, d] = lo[:, None, d]
        ch[:, :, d] = hi[:, None, d]
    zl = np.broadcast_to(zlo[None], (N, M, 2)).copy()
    zh = np.broadcast_to(zhi[None], (N, M, 2)).copy()
    hp = has_prev[:, None]
    k = vb.decay / vb.coupling
    for _ in range(max_iter):
        before_l, before_h = cl.copy(), ch.copy()
        for axis, (ix, iv, ie) in enumerate(((0, 1, 4), (2, 3, 5))):
            xl, xh = cl[:, :, ix], ch[:, :, ix]
            ah = ch[:, :, ie]
            z_l, z_h = zl[:, :, axis], zh[:, :, axis]
            np.maximum(xl, z_l - 0.5 * ah, out=xl)
            np.minimum(xh, z_h + 0.5 * ah, out=xh)
            pl, ph = prev_lo[:, None, axis], prev_hi[:, None, axis]
            vlo = k * (xl - ph - vb.pos_noise) - vb.vel_noise
            vhi = k * (xh - pl + vb.pos_noise) + vb.vel_noise
            np.maximum(cl[:, :, iv], np.where(hp, vlo, -np.inf), out=cl[:, :, iv])
            np.minimum(ch[:, :, iv], np.where(hp, vhi, np.inf), out=ch[:, :, iv])
            gap = np.maximum(np.maximum(z_l - xh, xl - z_h), 0.0)
            np.maximum(cl[:, :, ie], 2.0 * gap, out=cl[:, :, ie])
            np.maximum(z_l, xl - 0.5 * ah, out=z_l)
            np.minimum(z_h, xh + 0.5 * ah, out=z_h)
        ok = np.all(cl <= ch, axis=2) & np.all(zl <= zh, axis=2)
        w = np.maximum(before_h - before_l, 1e-300)
        moved = ((cl - before_l) > tol * w) | ((before_h - ch) > tol * w)
        if not np.any(moved & ok[:, :, None]):
            break
    ok = np.all(cl <= ch, axis=2) & np.all(zl <= zh, axis=2)
    return cl, ch, ok


def a_ct(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Area of measurement space where clutter can still be consistent with each box.

    Outer rectangle (every point any state in the box could cover) minus the
    inner rectangle (points every state in the box covers).  Inner sides are
    clipped at zero.
    """
    xl, xh, yl, yh = lo[..., 0], hi[..., 0], lo[..., 2], hi[..., 2]
    al, ah, bl, bh = lo[..., 4], hi[..., 4], lo[..., 5], hi[..., 5]
    outer = ((xh + ah / 2) - (xl - ah / 2)) * ((yh + bh / 2) - (yl - bh / 2))
    inner_x = np.maximum((xl + al / 2) - (xh - al / 2), 0.0)
    inner_y = np.maximum((yl + bl / 2) - (yh - bl / 2), 0.0)
    return outer - inner_x * inner_y


def estimate_q(lo: np.ndarray, hi: np.ndarray, rho: float, scale: float = 1.0) -> np.ndarray:
    """Per-particle clutter allowance ``ceil(scale * rho * A_CT / 4)``, floored at 0."""
    q = np.ceil(scale * rho * a_ct(lo, hi) / 4.0 - 1e-12)
    return np.maximum(q, 0).astype(int)


def clutter_density(rates: RatePosterior, sensor_area: float, prev_estimate: CrowdState | None) -> float:
    """Clutter density from the posterior clutter rate over the non-crowd sensor area."""
    _, lam_c = rate_mean(rates)
    a_t = prev_estimate.area if prev_estimate is not None else 0.0
    a_cr = sensor_area - a_t
    if a_cr <= 0:
        raise ValueError("sensor area must exceed the crowd area estimate")
    return lam_c / a_cr


def _log_volume(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.sum(np.log(np.maximum(hi - lo, MIN_WIDTH)), axis=-1)


@dataclass
class UpdateInfo:
    outcome: ContractionOutcome
    q: np.ndarray
    diverged: bool


def combine(clo: np.ndarray, chi: np.ndarray, ok: np.ndarray, q: np.ndarray,
            adaptive: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """q-relaxed intersection of each particle's consistent contractions.

    ``clo``/``chi`` are (N, M, 6), ``ok`` the (N, M) existing sets and ``q`` the
    per-particle allowance.  With ``adaptive`` the allowance is raised to the
    smallest value giving a non-empty result (found by bisection), so a particle
    that does hold the crowd is not emptied by a clutter surplus.
    """
    se = ok.sum(axis=1)
    sweep = RelaxedSweep(np.moveaxis(clo, 1, 2), np.moveaxis(chi, 1, 2), valid=ok)

    def run(qq):
        l, h = sweep.bounds(np.maximum(se - qq, 1)[:, None])
        return l, h, np.all(l <= h, axis=1)

    q_used = np.minimum(q, np.maximum(se - 1, 0))
    comb_lo, comb_hi, nonempty = run(q_used)
    if adaptive:
        bad = (~nonempty) & (se > 0)
        lo_q = q_used.copy()  # empty at lo_q
        hi_q = np.maximum(se - 1, 0)  # need = 1: the hull, never empty
        while np.any(bad & (hi_q - lo_q > 1)):
            mid = np.where(bad, (lo_q + hi_q) // 2, q_used)
            _, _, ne = run(mid)
            lo_q = np.where(bad & ~ne, mid, lo_q)
            hi_q = np.where(bad & ne, mid, hi_q)
        if np.any(bad):
            q_used = np.where(bad, hi_q, q_used)
            comb_lo, comb_hi, _ = run(q_used)
    return comb_lo, comb_hi, q_used


def bpf_update(ps: BoxParticleSet, Z: MeasurementSet, lambda_T: float, rho: float,
               p: DynamicsParams, sensor: SensorParams, max_iter: int = 10, tol: float = 1e-6,
               noise_multiplier: float = 3.0, adaptive_q: bool = True,
               q_scale: float = 1.0) -> tuple[BoxParticleSet, UpdateInfo]:
    """Contract, combine and reweight every particle against one scan."""
    N, M = ps.n, len(Z)
    vb = VelocityBounds.from_params(p, noise_multiplier)
    q = estimate_q(ps.lo, ps.hi, rho, q_scale)
    clo, chi, ok = contract_all(ps.lo, ps.hi, Z.lo, Z.hi, ps.prev_lo, ps.prev_hi, ps.has_prev,
                                vb, max_iter, tol)
    se = ok.sum(axis=1)
    if M > 0:
        comb_lo, comb_hi, q_used = combine(clo, chi, ok, q, adaptive_q)
    else:
        comb_lo, comb_hi, q_used = ps.lo.copy(), ps.hi.copy(), np.zeros(N, dtype=int)
    alive = (se > 0) & np.all(comb_lo <= comb_hi, axis=1) if M > 0 else np.ones(N, dtype=bool)

    # velocity contraction of the combined box against the stored previous position
    k = vb.decay / vb.coupling
    hp = ps.has_prev & alive
    for axis, (ix, iv) in enumerate(((0, 1), (2, 3))):
        vlo = k * (comb_lo[:, ix] - ps.prev_hi[:, axis] - vb.pos_noise) - vb.vel_noise
        vhi = k * (comb_hi[:, ix] - ps.prev_lo[:, axis] + vb.pos_noise) + vb.vel_noise
        comb_lo[:, iv] = np.where(hp, np.maximum(comb_lo[:, iv], vlo), comb_lo[:, iv])
        comb_hi[:, iv] = np.where(hp, np.minimum(comb_hi[:, iv], vhi), comb_hi[:, iv])
    alive &= np.all(comb_lo <= comb_hi, axis=1)

    log_vp = _log_volume(ps.lo, ps.hi)
    mid = 0.5 * (ps.lo + ps.hi)
    log_r = np.log(r_area(mid, sensor))
    expo = np.minimum(M - (se - q_used), M)
    safe_lo = np.where(alive[:, None], comb_lo, 0.0)
    safe_hi = np.where(alive[:, None], comb_hi, 1.0)
    with np.errstate(divide="ignore"):
        logw = (np.log(ps.w)
                - expo * log_vp
                + se * (math.log(lambda_T) - math.log(rho) - log_r - log_vp)
                + _log_volume(safe_lo, safe_hi))
    logw = np.where(alive, logw, -np.inf)
    w, diverged = normalize_log_weights(logw)

    out = ps.copy()
    out.lo = np.where(alive[:, None], comb_lo, ps.lo)
    out.hi = np.where(alive[:, None], comb_hi, ps.hi)
    out.w = w
    out.prev_lo = out.lo[:, POS].copy()
    out.prev_hi = out.hi[:, POS].copy()
    out.has_prev = np.ones(N, dtype=bool)
    outcome = ContractionOutcome(clo, chi, ok, comb_lo, comb_hi, q_used)
    return out, UpdateInfo(outcome, q, diverged)


def bpf_estimate(ps: BoxParticleSet) -> tuple[Box, CrowdState]:
    """Weighted interval sum of the particles and its midpoint."""
    lo = ps.w @ ps.lo
    hi = ps.w @ ps.hi
    box = Box(lo, hi)
    return box, CrowdState.from_array(box.mid)


def bpf_resample(ps: BoxParticleSet, N_thresh: float, rng: np.random.Generator,
                 split_dims: Sequence[int] | None = None) -> tuple[BoxParticleSet, bool]:
    """Resample by subdivision when the effective sample size drops to ``N_thresh``.

    A particle drawn ``c`` times is replaced by ``c`` equal slabs of its support
    cut along its widest dimension among ``split_dims`` (all dimensions if None).
    """
    dims = np.arange(ps.lo.shape[1]) if split_dims is None else np.asarray(split_dims, dtype=int)
    if effective_sample_size(ps.w) > N_thresh:
        return ps, False
    N = ps.n
    counts = systematic_counts(ps.w, N, rng)
    lo, hi, plo, phi, hp = [], [], [], [], []
    for i in np.flatnonzero(counts):
        c = int(counts[i])
        l, h = ps.lo[i], ps.hi[i]
        widths = h - l
        if c == 1 or not np.any(widths[dims] > 0):
            parts = [(l.copy(), h.copy()) for _ in range(c)]
        else:
            d = int(dims[np.argmax(widths[dims])])
            cuts = np.linspace(l[d], h[d], c + 1)
            cuts[-1] = h[d]
            parts = []
            for j in range(c):
                cl, ch = l.copy(), h.copy()
                cl[d], ch[d] = cuts[j], cuts[j + 1]
                parts.append((cl, ch))
        for cl, ch in parts:
            lo.append(cl)
            hi.append(ch)
            plo.append(ps.prev_lo[i])
            phi.append(ps.prev_hi[i])
            hp.append(ps.has_prev[i])
    out = BoxParticleSet(np.array(lo), np.array(hi), np.full(N, 1.0 / N), np.array(plo), np.array(phi),
                         np.array(hp, dtype=bool))
    return out, True


@dataclass
class BoxPFConfig:
    n_particles: int = 4
    n_thresh_ratio: float = 2.0 / 3.0
    rates: str = "known"  # or "estimated"
    lambda_T: float = 100.0
    rho: float = 1e-2
    sensor_area: float = math.pi * 100.0**2
    rate_prior: RatePosterior = field(default_factory=RatePosterior)
    forgetting: float = 1.0
    max_iter: int = 10
    tol: float = 1e-6
    noise_multiplier: float = 3.0
    adaptive_q: bool = True
    q_scale: float = 1.0
    # velocities (m/s) are not comparable with metres and are never cut
    split_dims: tuple[int, ...] | None = (0, 2, 4, 5)


@dataclass
class StepResult:
    estimate: CrowdState
    box: Box | None
    lambda_T: float
    lambda_C: float
    n_eff: float
    diverged: bool


class BoxPF:
    """Driver holding the particle set and the rate posterior between scans."""

    name = "boxpf"

    def __init__(self, prior: Box, dynamics: DynamicsParams, sensor: SensorParams, cfg: BoxPFConfig,
                 rng: np.random.Generator):
        self.dynamics = dynamics
        self.sensor = sensor
        self.cfg = cfg
        self.rng = rng
        self.particles = bpf_init(prior, cfg.n_particles)
        self.rates = cfg.rate_prior
        self.prev_estimate: CrowdState | None = None
        self.last_info: UpdateInfo | None = None

    @property
    def n_particles(self) -> int:
        return self.cfg.n_particles

    def _current_rates(self) -> tuple[float, float]:
        if self.cfg.rates == "known":
            return self.cfg.lambda_T, self.cfg.rho
        lam_t, _ = rate_mean(self.rates)
        rho = clutter_density(self.rates, self.cfg.sensor_area, self.prev_estimate)
        return lam_t, max(rho, 1e-300)

    def step(self, Z: MeasurementSet) -> StepResult:
        cfg = self.cfg
        ps = bpf_predict(self.particles, self.dynamics, cfg.noise_multiplier)
        lam_t, rho = self._current_rates()
        ps, info = bpf_update(ps, Z, max(lam_t, 1e-300), rho, self.dynamics, self.sensor,
                              cfg.max_iter, cfg.tol, cfg.noise_multiplier, cfg.adaptive_q,
                              cfg.q_scale)
        self.last_info = info
        if cfg.rates == "estimated":
            self.rates = rate_update(self.rates, info.outcome.se_sizes, len(Z), cfg.forgetting)
        box, est = bpf_estimate(ps)
        n_eff = effective_sample_size(ps.w)
        self.particles, _ = bpf_resample(ps, cfg.n_thresh_ratio * ps.n, self.rng, cfg.split_dims)
        self.prev_estimate = est
        if cfg.rates == "estimated":
            lam_t, lam_c = rate_mean(self.rates)
        else:
            lam_t, lam_c = cfg.lambda_T, cfg.rho * (cfg.sensor_area - est.area)
        return StepResult(est, box, lam_t, lam_c, n_eff, info.diverged)
