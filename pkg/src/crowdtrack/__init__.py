"""Tracking a crowd as a rectangular extended object under heavy clutter.

Three filters share one state model: a box particle filter built on interval
contraction and q-relaxed intersection, a convolution particle filter with a
uniform measurement kernel, and a bootstrap SIR baseline.
"""

from .boxpf import BoxPF, BoxPFConfig
from .config import Config, ConfigError, load_config, parse_config
from .cpf import CPF, CPFConfig
from .intervals import Box, Interval, q_relaxed_intersect
from .models import CrowdState, DynamicsParams, MeasurementSet, SensorParams
from .rates import RatePosterior
from .sirpf import SIRPF, SIRConfig

__all__ = [
    "BoxPF", "BoxPFConfig", "CPF", "CPFConfig", "SIRPF", "SIRConfig", "Box", "Interval", "q_relaxed_intersect",
    "CrowdState", "DynamicsParams", "MeasurementSet", "SensorParams", "RatePosterior", "Config", "ConfigError",
    "load_config", "parse_config",
]
