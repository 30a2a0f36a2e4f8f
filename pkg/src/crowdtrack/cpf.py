"""Adaptive convolution particle filter.

Point particles are propagated through the crowd dynamics; each particle's
kernel is the uniform density on its measurement region r(x) plus a uniform
density on the whole sensor region, so a measurement far from every crowd
hypothesis never zeroes a weight.  No measurement or clutter rates are needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .intervals import Box
from .models import EXT, CrowdState, DynamicsParams, MeasurementSet, SensorParams, crowd_rect, propagate
from .resampling import effective_sample_size, normalize_log_weights, systematic_indices


@dataclass
class PointParticleSet:
    """``states`` (N, 6) and normalised ``w`` (N,)."""

    states: np.ndarray
    w: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def copy(self) -> "PointParticleSet":
        return PointParticleSet(self.states.copy(), self.w.copy())


def sample_prior(prior: Box, N: int, rng: np.random.Generator) -> PointParticleSet:
    if N < 1:
        raise ValueError("need at least one particle")
    u = rng.random((N, prior.dim))
    states = prior.lo + u * (prior.hi - prior.lo)
    return PointParticleSet(states, np.full(N, 1.0 / N))


def cpf_init(prior: Box, N: int, rng: np.random.Generator) -> PointParticleSet:
    return sample_prior(prior, N, rng)


def kernel_support(states: np.ndarray, sensor: SensorParams) -> tuple[np.ndarray, np.ndarray]:
    """Corners (N, 2) of each particle's measurement region r(x)."""
    lo, hi = crowd_rect(states)
    hw = sensor.half_width
    return lo - hw, hi + hw


def cpf_predict(ps: PointParticleSet, p: DynamicsParams, rng: np.random.Generator) -> PointParticleSet:
    return PointParticleSet(propagate(ps.states, p, rng), ps.w.copy())


def cpf_kernel(z, states, sensor: SensorParams, sensor_area: float) -> np.ndarray:
    """Kernel values (N, M): ``1/|CS|`` inside the particle's region plus ``1/|SS|`` everywhere.

    Points outside the sensor region still get the ``1/|SS|`` term; callers that
    care can test membership themselves.
    """
    if sensor_area <= 0:
        raise ValueError("sensor_area must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    st = np.atleast_2d(np.asarray(states, dtype=float))
    lo, hi = kernel_support(st, sensor)
    inside = np.all((z[None] >= lo[:, None]) & (z[None] <= hi[:, None]), axis=2)
    area = np.prod(hi - lo, axis=1)
    return inside / area[:, None] + 1.0 / sensor_area


def cpf_update(ps: PointParticleSet, Z: MeasurementSet, sensor: SensorParams,
               sensor_area: float) -> tuple[PointParticleSet, bool]:
    """Multiply in every measurement's kernel value; returns (particles, diverged)."""
    if len(Z) == 0:
        return ps.copy(), False
    with np.errstate(divide="ignore"):
        logw = np.log(ps.w) + np.log(cpf_kernel(Z.points, ps.states, sensor, sensor_area)).sum(axis=1)
    w, diverged = normalize_log_weights(logw)
    return PointParticleSet(ps.states.copy(), w), diverged


def weighted_mean(ps: PointParticleSet) -> CrowdState:
    m = ps.w @ ps.states
    m[EXT] = np.maximum(m[EXT], 1e-12)  # CrowdState insists on positive sides
    return CrowdState.from_array(m)


def cpf_estimate(ps: PointParticleSet) -> CrowdState:
    return weighted_mean(ps)


def resample_systematic(ps: PointParticleSet, rng: np.random.Generator) -> PointParticleSet:
    idx = systematic_indices(ps.w, ps.n, rng)
    return PointParticleSet(ps.states[idx].copy(), np.full(ps.n, 1.0 / ps.n))


def silverman_bandwidth(n: int, dim: int) -> float:
    return (4.0 / (n * (dim + 2))) ** (1.0 / (dim + 4))


def cpf_resample(ps: PointParticleSet, rng: np.random.Generator, state_kernel: bool = False,
                 extent_floor: float = 0.1) -> PointParticleSet:
    """Systematic resampling; with ``state_kernel`` the draws come from the
    Gaussian-kernel smoothed posterior (bandwidth from Silverman's rule on the
    weighted covariance) instead of the bare weighted sample."""
    out = resample_systematic(ps, rng)
    if not state_kernel:
        return out
    mean = ps.w @ ps.states
    dev = ps.states - mean
    cov = (ps.w[:, None] * dev).T @ dev
    h = silverman_bandwidth(ps.n, ps.states.shape[1])
    evals, evecs = np.linalg.eigh(cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    out.states += h * rng.standard_normal(out.states.shape) @ root.T
    out.states[:, EXT] = np.maximum(out.states[:, EXT], extent_floor)
    return out


@dataclass
class CPFConfig:
    n_particles: int = 1000
    sensor_area: float = math.pi * 100.0**2
    ess_resampling: bool = False  # False: resample every step
    state_kernel: bool = True
    n_thresh_ratio: float = 2.0 / 3.0


@dataclass
class PointStepResult:
    estimate: CrowdState
    n_eff: float
    diverged: bool
    box: Box | None = None
    lambda_T: float = math.nan
    lambda_C: float = math.nan


class CPF:
    name = "cpf"

    def __init__(self, prior: Box, dynamics: DynamicsParams, sensor: SensorParams, cfg: CPFConfig,
                 rng: np.random.Generator):
        self.dynamics = dynamics
        self.sensor = sensor
        self.cfg = cfg
        self.rng = rng
        self.particles = cpf_init(prior, cfg.n_particles, rng)

    @property
    def n_particles(self) -> int:
        return self.cfg.n_particles

    def step(self, Z: MeasurementSet) -> PointStepResult:
        ps = cpf_predict(self.particles, self.dynamics, self.rng)
        ps, diverged = cpf_update(ps, Z, self.sensor, self.cfg.sensor_area)
        est = cpf_estimate(ps)
        n_eff = effective_sample_size(ps.w)
        if not self.cfg.ess_resampling or n_eff <= self.cfg.n_thresh_ratio * ps.n:
            ps = cpf_resample(ps, self.rng, self.cfg.state_kernel, self.dynamics.extent_floor)
        self.particles = ps
        return PointStepResult(est, n_eff, diverged)
