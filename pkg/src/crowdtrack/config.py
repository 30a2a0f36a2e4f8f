"""Scenario and experiment files.

Files are INI-style (``key = value`` under ``[section]`` headers).  Vectors are
comma separated.  Every key has a default, so a file only needs what differs
from the rectangular benchmark scenario.  Unknown sections or keys are errors,
reported with their ``section.key`` path.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxpf import BoxPFConfig
from .cpf import CPFConfig
from .intervals import Box
from .models import CrowdState, DynamicsParams, SensorParams
from .rates import RatePosterior
from .simulators import Corridor, CrowdScenario, ForceParams, RectScenario
from .sirpf import SIRConfig

FILTERS = ("boxpf", "cpf", "sirpf")


class ConfigError(ValueError):
    """Bad configuration value; ``path`` names the offending ``section.key``."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class ScenarioConfig:
    kind: str = "rect"  # rect | crowd
    Ts: float = 0.125
    T_tot: float = 40.0
    x0: tuple = (100.0, 0.0, 100.0, 0.0)
    theta0: tuple = (40.0, 40.0)
    T_cv: float = 15.0
    sigma_v: float = 10.0
    sigma_theta: float = 1.0
    sigma_z: tuple = (0.1, 0.1)
    lambda_T: float = 100.0
    rho: float = 1e-2
    clutter_radius: float = 100.0
    # pedestrian crowd only
    n_T: int = 100
    start_centre: tuple = (0.0, 0.0)
    start_size: tuple = (20.0, 20.0)
    k_goal: float = 1.0
    k_ped: float = 2.0
    d0: float = 0.5
    ped_cutoff: float = 5.0
    wall_cutoff: float = 2.0
    max_speed: float = 2.0
    corridor_length: float = 200.0
    corridor_half_width: float = 15.0
    gap_x: float = 105.0
    gap_half_width: float = 2.0
    funnel: float = 30.0
    corridor_start_x: float = -30.0


@dataclass
class FilterModelConfig:
    """The model the filters assume; unset values copy the scenario's."""

    T_cv: float | None = None
    sigma_v: float | None = None
    sigma_theta: float | None = None
    sigma_z: tuple | None = None
    prior_halfwidth: tuple = (50.0, 10.0, 50.0, 10.0, 30.0, 30.0)
    extent_floor: float = 0.1


@dataclass
class ExperimentConfig:
    n_runs: int = 100
    master_seed: int = 1
    filters: tuple = ("boxpf",)
    parity: str = "equal_particles"  # or equal_budget
    budget_reference: str = "boxpf"
    probe_steps: int = 40
    probe_particles: int = 200
    lock_threshold: float = 20.0
    divergence_threshold: float = 20.0
    divergence_window: float = 0.1
    workers: int = 1


@dataclass
class Config:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    model: FilterModelConfig = field(default_factory=FilterModelConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    boxpf: dict = field(default_factory=dict)
    cpf: dict = field(default_factory=dict)
    sirpf: dict = field(default_factory=dict)

    # -- derived objects -------------------------------------------------
    @property
    def sensor(self) -> SensorParams:
        return SensorParams(tuple(self.scenario.sigma_z))

    @property
    def filter_sensor(self) -> SensorParams:
        return SensorParams(tuple(self.model.sigma_z or self.scenario.sigma_z))

    @property
    def truth_dynamics(self) -> DynamicsParams:
        s = self.scenario
        return DynamicsParams.from_time_constant(s.T_cv, s.sigma_v, s.Ts, s.sigma_theta, self.model.extent_floor)

    @property
    def filter_dynamics(self) -> DynamicsParams:
        s, m = self.scenario, self.model
        pick = lambda a, b: b if a is None else a
        return DynamicsParams.from_time_constant(pick(m.T_cv, s.T_cv), pick(m.sigma_v, s.sigma_v), s.Ts,
                                                 pick(m.sigma_theta, s.sigma_theta), m.extent_floor)

    @property
    def sensor_area(self) -> float:
        return math.pi * self.scenario.clutter_radius**2

    def rect_scenario(self) -> RectScenario:
        s = self.scenario
        return RectScenario(CrowdState(*s.x0, *s.theta0), self.truth_dynamics, self.sensor, s.lambda_T, s.rho,
                            s.clutter_radius, s.T_tot)

    def crowd_scenario(self) -> CrowdScenario:
        s = self.scenario
        forces = ForceParams(s.k_goal, s.k_ped, s.d0, s.ped_cutoff, s.wall_cutoff, s.max_speed, s.Ts)
        corridor = Corridor.bottleneck(s.corridor_length, s.corridor_half_width, s.gap_x, s.gap_half_width,
                                       s.funnel, s.corridor_start_x)
        return CrowdScenario(s.n_T, s.T_tot, self.sensor, s.rho, s.clutter_radius, forces, corridor,
                             tuple(s.start_centre), tuple(s.start_size))

    def prior_box(self, centre: np.ndarray) -> Box:
        hw = np.asarray(self.model.prior_halfwidth, dtype=float)
        lo = centre - hw
        lo[4:] = np.maximum(lo[4:], self.model.extent_floor)
        return Box(lo, centre + hw)

    def known_lambda_T(self) -> float:
        s = self.scenario
        return float(s.n_T) if s.kind == "crowd" else s.lambda_T

    def boxpf_config(self, rates: str | None = None, n_particles: int | None = None) -> BoxPFConfig:
        kw = dict(self.boxpf)
        if rates is not None:
            kw["rates"] = rates
        if n_particles is not None:
            kw["n_particles"] = n_particles
        return BoxPFConfig(lambda_T=self.known_lambda_T(), rho=self.scenario.rho, sensor_area=self.sensor_area,
                           **kw)

    def cpf_config(self, n_particles: int | None = None) -> CPFConfig:
        kw = dict(self.cpf)
        if n_particles is not None:
            kw["n_particles"] = n_particles
        return CPFConfig(sensor_area=self.sensor_area, **kw)

    def sir_config(self, n_particles: int | None = None) -> SIRConfig:
        kw = dict(self.sirpf)
        if n_particles is not None:
            kw["n_particles"] = n_particles
        return SIRConfig(lambda_T=self.known_lambda_T(), rho=self.scenario.rho, **kw)

    def n_particles(self, name: str) -> int:
        return {"boxpf": self.boxpf_config, "cpf": self.cpf_config, "sirpf": self.sir_config}[name]().n_particles


# allowed keys of the per-filter sections, with their types
_FILTER_KEYS = {
    "boxpf": {"n_particles": int, "n_thresh_ratio": float, "rates": str, "forgetting": float, "max_iter": int,
              "tol": float, "noise_multiplier": float, "adaptive_q": bool, "q_scale": float,
              "split_dims": "ints", "rate_prior": "floats"},
    "cpf": {"n_particles": int, "ess_resampling": bool, "state_kernel": bool, "n_thresh_ratio": float},
    "sirpf": {"n_particles": int, "n_thresh_ratio": float},
}


def _convert(path: str, raw: str, kind):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind in ("floats", tuple):
            return tuple(float(t) for t in raw.split(",") if t.strip())
        if kind == "ints":
            if raw.strip().lower() in ("all", "none"):
                return None
            return tuple(int(t) for t in raw.split(",") if t.strip())
        if kind == "strs":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _field_kind(f: dataclasses.Field, default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple) or "tuple" in str(f.type):
        return "strs" if f.name == "filters" else "floats"
    if "float" in str(f.type):
        return float
    return str


def _fill(obj, section: configparser.SectionProxy, name: str) -> None:
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, raw in section.items():
        path = f"{name}.{key}"
        if key not in fields:
            raise ConfigError(path, "unknown key")
        setattr(obj, key, _convert(path, raw, _field_kind(fields[key], getattr(obj, key))))


def _validate(cfg: Config) -> None:
    s, e = cfg.scenario, cfg.experiment
    checks = [
        ("scenario.kind", s.kind in ("rect", "crowd"), "must be rect or crowd"),
        ("scenario.Ts", s.Ts > 0, "must be positive"),
        ("scenario.T_tot", s.T_tot >= s.Ts, "must cover at least one step"),
        ("scenario.x0", len(s.x0) == 4, "needs 4 values"),
        ("scenario.theta0", len(s.theta0) == 2 and min(s.theta0) > 0, "needs 2 positive values"),
        ("scenario.sigma_z", len(s.sigma_z) in (1, 2) and min(s.sigma_z) > 0, "needs 1 or 2 positive values"),
        ("scenario.T_cv", s.T_cv > 0, "must be positive"),
        ("scenario.lambda_T", s.lambda_T >= 0, "must be non-negative"),
        ("scenario.rho", s.rho >= 0, "must be non-negative"),
        ("scenario.clutter_radius", s.clutter_radius > 0, "must be positive"),
        ("scenario.n_T", s.n_T >= 1, "must be at least 1"),
        ("model.prior_halfwidth", len(cfg.model.prior_halfwidth) == 6, "needs 6 values"),
        ("experiment.n_runs", e.n_runs >= 1, "must be at least 1"),
        ("experiment.filters", len(e.filters) >= 1 and all(f in FILTERS for f in e.filters),
         f"must list filters from {FILTERS}"),
        ("experiment.parity", e.parity in ("equal_particles", "equal_budget"),
         "must be equal_particles or equal_budget"),
        ("experiment.budget_reference", e.budget_reference in FILTERS, f"must be one of {FILTERS}"),
        ("experiment.workers", e.workers >= 1, "must be at least 1"),
    ]
    for path, ok, msg in checks:
        if not ok:
            raise ConfigError(path, msg)
    if cfg.boxpf.get("rates", "known") not in ("known", "estimated"):
        raise ConfigError("boxpf.rates", "must be known or estimated")
    for name, build in (("boxpf", cfg.boxpf_config), ("cpf", cfg.cpf_config), ("sirpf", cfg.sir_config)):
        try:
            n = build().n_particles
        except (TypeError, ValueError) as err:
            raise ConfigError(name, str(err)) from None
        if n < 1:
            raise ConfigError(f"{name}.n_particles", "must be at least 1")


def parse_config(text: str) -> Config:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep case: lambda_T, T_cv, ...
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError("<file>", str(e).splitlines()[0]) from None
    cfg = Config()
    for name in cp.sections():
        sec = cp[name]
        if name in ("scenario", "model", "experiment"):
            _fill(getattr(cfg, name), sec, name)
        elif name in _FILTER_KEYS:
            out = getattr(cfg, name)
            for key, raw in sec.items():
                kind = _FILTER_KEYS[name].get(key)
                if kind is None:
                    raise ConfigError(f"{name}.{key}", "unknown key")
                val = _convert(f"{name}.{key}", raw, kind)
                if key == "rate_prior":
                    if len(val) != 4 or min(val) <= 0:
                        raise ConfigError(f"{name}.{key}", "needs 4 positive values alpha_T, beta_T, alpha_C, beta_C")
                    val = RatePosterior(*val)
                out[key] = val
        else:
            raise ConfigError(name, "unknown section")
    _validate(cfg)
    return cfg


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(path), e.strerror or str(e)) from None
    return parse_config(text)
