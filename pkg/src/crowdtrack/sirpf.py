"""Bootstrap (SIR) particle filter with the extended-target Poisson likelihood.

Each measurement contributes ``1 + (lambda_T / rho) p(z | x)`` to a particle's
likelihood, with ``p(z | x)`` the closed-form crowd measurement density.  The
rates must be known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpf import PointParticleSet, PointStepResult, resample_systematic, sample_prior, weighted_mean
from .intervals import Box
from .models import CrowdState, DynamicsParams, MeasurementSet, SensorParams, point_likelihood, propagate
from .resampling import effective_sample_size, normalize_log_weights


def sir_init(prior: Box, N: int, rng: np.random.Generator) -> PointParticleSet:
    return sample_prior(prior, N, rng)


def sir_predict(ps: PointParticleSet, p: DynamicsParams, rng: np.random.Generator) -> PointParticleSet:
    return PointParticleSet(propagate(ps.states, p, rng), ps.w.copy())


def sir_log_likelihood(Z: MeasurementSet, states: np.ndarray, lambda_T: float, rho: float,
                       sensor: SensorParams) -> np.ndarray:
    """Per-particle log of the product over measurements (without the constant exp(-lambda_T))."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if len(Z) == 0:
        return np.zeros(np.atleast_2d(states).shape[0])
    lik = point_likelihood(Z.points, np.atleast_2d(states), sensor)
    return np.log1p((lambda_T / rho) * lik).sum(axis=1)


def sir_update(ps: PointParticleSet, Z: MeasurementSet, lambda_T: float, rho: float,
               sensor: SensorParams) -> tuple[PointParticleSet, bool]:
    with np.errstate(divide="ignore"):
        logw = np.log(ps.w) + sir_log_likelihood(Z, ps.states, lambda_T, rho, sensor)
    w, diverged = normalize_log_weights(logw)
    return PointParticleSet(ps.states.copy(), w), diverged


def sir_estimate(ps: PointParticleSet) -> CrowdState:
    return weighted_mean(ps)


def sir_resample(ps: PointParticleSet, N_thresh: float, rng: np.random.Generator) -> tuple[PointParticleSet, bool]:
    if effective_sample_size(ps.w) > N_thresh:
        return ps, False
    return resample_systematic(ps, rng), True


@dataclass
class SIRConfig:
    n_particles: int = 1000
    lambda_T: float = 100.0
    rho: float = 1e-2
    n_thresh_ratio: float = 2.0 / 3.0


class SIRPF:
    name = "sirpf"

    def __init__(self, prior: Box, dynamics: DynamicsParams, sensor: SensorParams, cfg: SIRConfig,
                 rng: np.random.Generator):
        self.dynamics = dynamics
        self.sensor = sensor
        self.cfg = cfg
        self.rng = rng
        self.particles = sir_init(prior, cfg.n_particles, rng)

    @property
    def n_particles(self) -> int:
        return self.cfg.n_particles

    def step(self, Z: MeasurementSet) -> PointStepResult:
        cfg = self.cfg
        ps = sir_predict(self.particles, self.dynamics, self.rng)
        ps, diverged = sir_update(ps, Z, cfg.lambda_T, cfg.rho, self.sensor)
        est = sir_estimate(ps)
        n_eff = effective_sample_size(ps.w)
        self.particles, _ = sir_resample(ps, cfg.n_thresh_ratio * ps.n, self.rng)
        return PointStepResult(est, n_eff, diverged, lambda_T=cfg.lambda_T)
