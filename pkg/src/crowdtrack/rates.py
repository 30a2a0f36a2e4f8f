"""Gamma-Poisson recursive estimation of the crowd and clutter measurement rates."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence


@dataclass(frozen=True)
class RatePosterior:
    """Gamma(shape, rate) posteriors for the crowd rate (T) and clutter rate (C)."""

    alpha_T: float = 1.0
    beta_T: float = 0.01
    alpha_C: float = 1.0
    beta_C: float = 0.01

    def __post_init__(self):
        if min(self.alpha_T, self.beta_T, self.alpha_C, self.beta_C) <= 0:
            raise ValueError("Gamma parameters must be positive")

    @property
    def variance(self) -> tuple[float, float]:
        return self.alpha_T / self.beta_T**2, self.alpha_C / self.beta_C**2


def rate_mean(post: RatePosterior) -> tuple[float, float]:
    return post.alpha_T / post.beta_T, post.alpha_C / post.beta_C


def rate_predict(post: RatePosterior, forgetting: float = 1.0) -> RatePosterior:
    """Exponential forgetting: both Gamma parameters divided by ``forgetting`` (>= 1)."""
    if forgetting < 1.0:
        raise ValueError("forgetting factor must be >= 1")
    if forgetting == 1.0:
        return post
    g = forgetting
    return RatePosterior(post.alpha_T / g, post.beta_T / g, post.alpha_C / g, post.beta_C / g)


def rate_update_counts(post: RatePosterior, m_T: int, m_C: int) -> RatePosterior:
    return replace(post, alpha_T=post.alpha_T + m_T, beta_T=post.beta_T + 1,
                   alpha_C=post.alpha_C + m_C, beta_C=post.beta_C + 1)


def rate_update(post: RatePosterior, particles_S_E: Sequence[int], M_total: int,
                forgetting: float = 1.0) -> RatePosterior:
    """One scan update from the box PF's per-particle existing-set sizes.

    The crowd count is the smallest existing-set size over the particles and the
    clutter count whatever remains of the scan.
    """
    if M_total < 0:
        raise ValueError("M_total must be non-negative")
    if len(particles_S_E) == 0:
        raise ValueError("need at least one particle")
    m_T = min(int(min(particles_S_E)), M_total)
    m_C = M_total - m_T
    return rate_update_counts(rate_predict(post, forgetting), m_T, m_C)
