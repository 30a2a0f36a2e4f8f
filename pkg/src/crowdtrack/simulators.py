"""Ground-truth generators.

``rect_sim_run`` drives the rectangular group object model.  The pedestrian
simulator moves point walkers through a walled corridor with a bottleneck
under goal attraction, pairwise repulsion and wall repulsion; its ground truth
is the bounding rectangle of the walkers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import (CrowdState, DynamicsParams, MeasurementSet, SensorParams, generate_measurements,
                     sample_clutter, step_truth)


@dataclass(frozen=True)
class RectScenario:
    initial: CrowdState = CrowdState(100.0, 0.0, 100.0, 0.0, 40.0, 40.0)
    dynamics: DynamicsParams = DynamicsParams(1.0 / 15.0, 10.0, 0.125, 1.0)
    sensor: SensorParams = SensorParams((0.1, 0.1))
    lambda_T: float = 100.0
    rho: float = 1e-2
    clutter_radius: float = 100.0
    T_tot: float = 40.0

    @property
    def n_steps(self) -> int:
        return int(round(self.T_tot / self.dynamics.Ts))

    def clutter_rate(self, s: CrowdState) -> float:
        """Expected clutter count: density times the disc area outside the crowd."""
        return self.rho * max(math.pi * self.clutter_radius**2 - s.area, 0.0)


def rect_sim_run(s: RectScenario, rng: np.random.Generator) -> tuple[list[CrowdState], list[MeasurementSet]]:
    truth, scans = [], []
    state = s.initial
    for k in range(1, s.n_steps + 1):
        state = step_truth(state, s.dynamics, rng)
        truth.append(state)
        scans.append(generate_measurements(state, s.lambda_T, s.clutter_rate(state), s.sensor,
                                           s.clutter_radius, rng, k))
    return truth, scans


# ---------------------------------------------------------------------------
# pedestrian crowd


@dataclass
class Pedestrians:
    """Positions and velocities of all walkers, (n, 2) each."""

    pos: np.ndarray
    vel: np.ndarray

    def __len__(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "Pedestrians":
        return Pedestrians(self.pos.copy(), self.vel.copy())


@dataclass(frozen=True)
class Corridor:
    """Wall segments ``walls`` (W, 2, 2) and goal points ``goals`` (G, 2), goals ordered along x."""

    walls: np.ndarray
    goals: np.ndarray
    gap_x: float = 0.0

    @classmethod
    def bottleneck(cls, length: float = 200.0, half_width: float = 15.0, gap_x: float = 105.0,
                   gap_half_width: float = 2.0, funnel: float = 30.0, start_x: float = -30.0) -> "Corridor":
        """Straight corridor along x whose walls funnel into a gap at ``gap_x``."""
        walls = []
        for sgn in (1.0, -1.0):
            w, g = sgn * half_width, sgn * gap_half_width
            walls += [
                [[start_x, w], [gap_x - funnel, w]],
                [[gap_x - funnel, w], [gap_x, g]],
                [[gap_x, g], [gap_x + 1.0, g]],
                [[gap_x + 1.0, g], [gap_x + 1.0 + funnel, w]],
                [[gap_x + 1.0 + funnel, w], [start_x + length, w]],
            ]
        walls.append([[start_x, -half_width], [start_x, half_width]])
        goals = [[gap_x + 1.0, 0.0], [start_x + length + 1000.0, 0.0]]
        return cls(np.array(walls, dtype=float), np.array(goals, dtype=float), gap_x)


@dataclass(frozen=True)
class ForceParams:
    k_goal: float = 1.0
    k_ped: float = 2.0
    d0: float = 0.5
    ped_cutoff: float = 5.0
    wall_cutoff: float = 2.0
    max_speed: float = 2.0
    Ts: float = 0.125


def _closest_on_segments(p: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Closest points (n, W, 2) on every wall segment to every point."""
    a = walls[:, 0]
    ab = walls[:, 1] - a
    t = np.einsum("nwk,wk->nw", p[:, None] - a[None], ab) / np.einsum("wk,wk->w", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    return a[None] + t[..., None] * ab[None]


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def crosses_wall(p0: np.ndarray, p1: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """(n, W) mask: does the move p0 -> p1 properly intersect each segment?"""
    a = walls[None, :, 0]
    b = walls[None, :, 1]
    s0, s1 = p0[:, None], p1[:, None]
    d1 = _cross(a, b, s0)
    d2 = _cross(a, b, s1)
    d3 = _cross(s0, s1, a)
    d4 = _cross(s0, s1, b)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def _forces(peds: Pedestrians, c: Corridor, f: ForceParams) -> np.ndarray:
    pos = peds.pos
    n = pos.shape[0]
    acc = np.zeros_like(pos)
    if len(c.goals):
        # nearest goal still ahead along x; the last goal is the exit
        ahead = c.goals[None, :, 0] > pos[:, None, 0]
        gi = np.where(ahead.any(axis=1), np.argmax(ahead, axis=1), len(c.goals) - 1)
        to_goal = c.goals[gi] - pos
        dist = np.linalg.norm(to_goal, axis=1, keepdims=True)
        acc += f.k_goal * to_goal / np.maximum(dist, 1e-9)

    if n > 1:
        diff = pos[:, None] - pos[None]
        d = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(d, np.inf)
        mag = np.where(d < f.ped_cutoff, f.k_ped * np.exp(-d / f.d0), 0.0)
        acc += np.einsum("ij,ijk->ik", mag / np.maximum(d, 1e-9), diff)

    if len(c.walls):
        cp = _closest_on_segments(pos, c.walls)
        diff = pos[:, None] - cp
        d = np.linalg.norm(diff, axis=2)
        mag = np.where(d < f.wall_cutoff, f.k_ped * np.exp(-d / f.d0), 0.0)
        acc += np.einsum("iw,iwk->ik", mag / np.maximum(d, 1e-9), diff)
    return acc


def crowd_sim_step(peds: Pedestrians, c: Corridor, f: ForceParams,
                   rng: np.random.Generator | None = None) -> Pedestrians:
    """One symplectic-Euler step.  A move that would cross a wall slides along
    that wall instead, and is cancelled if the slide still crosses one."""
    vel = peds.vel + f.Ts * _forces(peds, c, f)
    speed = np.linalg.norm(vel, axis=1, keepdims=True)
    vel = vel * np.minimum(1.0, f.max_speed / np.maximum(speed, 1e-12))
    new = peds.pos + f.Ts * vel
    if len(c.walls):
        hit = crosses_wall(peds.pos, new, c.walls)
        for i in np.flatnonzero(hit.any(axis=1)):
            w = c.walls[np.argmax(hit[i])]
            t = (w[1] - w[0]) / np.linalg.norm(w[1] - w[0])
            vel[i] = t * (vel[i] @ t)
            new[i] = peds.pos[i] + f.Ts * vel[i]
            if crosses_wall(peds.pos[i:i + 1], new[i:i + 1], c.walls).any():
                new[i] = peds.pos[i]
                vel[i] = 0.0
    return Pedestrians(new, vel)


def init_pedestrians(n: int, centre, size, rng: np.random.Generator, min_gap: float = 0.8) -> Pedestrians:
    """``n`` walkers at rest, uniform in a rectangle with a minimum spacing (dart throwing)."""
    centre = np.asarray(centre, dtype=float)
    size = np.asarray(size, dtype=float)
    pts = []
    tries = 0
    while len(pts) < n:
        p = centre + (rng.random(2) - 0.5) * size
        tries += 1
        if tries > 1000 * n or all(np.hypot(*(p - q)) >= min_gap for q in pts):
            pts.append(p)
    pos = np.array(pts)
    return Pedestrians(pos, np.zeros_like(pos))


def crowd_truth_extract(peds: Pedestrians | np.ndarray, prev: CrowdState | None = None, Ts: float = 0.125,
                        extent_floor: float = 0.1) -> CrowdState:
    """Bounding rectangle of the walkers; velocity is the centre's finite difference."""
    pos = peds.pos if isinstance(peds, Pedestrians) else np.atleast_2d(np.asarray(peds, dtype=float))
    if pos.shape[0] < 1:
        raise ValueError("need at least one pedestrian")
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    c = 0.5 * (lo + hi)
    ext = np.maximum(hi - lo, extent_floor)
    if prev is None:
        v = (0.0, 0.0)
    else:
        v = ((c[0] - prev.x) / Ts, (c[1] - prev.y) / Ts)
    return CrowdState(c[0], v[0], c[1], v[1], ext[0], ext[1])


def crowd_sim_measurements(peds: Pedestrians, sensor: SensorParams, rho: float, clutter_radius: float,
                           rng: np.random.Generator, centre=None, k: int = 0) -> MeasurementSet:
    """Every walker observed with Gaussian noise, plus Poisson clutter in the disc about ``centre``."""
    pos = peds.pos
    if centre is None:
        centre = 0.5 * (pos.min(axis=0) + pos.max(axis=0))
    crowd = pos + rng.standard_normal(pos.shape) * np.asarray(sensor.sigma_z)
    n_c = rng.poisson(rho * math.pi * clutter_radius**2)
    clutter = sample_clutter(centre, clutter_radius, n_c, rng)
    clutter = clutter + rng.standard_normal(clutter.shape) * np.asarray(sensor.sigma_z)
    pts = np.vstack([crowd, clutter])
    pts = pts[rng.permutation(pts.shape[0])]
    return MeasurementSet.from_points(pts, sensor, k=k, n_crowd=pos.shape[0])


@dataclass(frozen=True)
class CrowdScenario:
    n_T: int = 100
    T_tot: float = 150.0
    sensor: SensorParams = SensorParams((0.1, 0.1))
    rho: float = 1e-3
    clutter_radius: float = 100.0
    forces: ForceParams = ForceParams()
    corridor: Corridor = field(default_factory=Corridor.bottleneck)
    start_centre: tuple[float, float] = (0.0, 0.0)
    start_size: tuple[float, float] = (20.0, 20.0)

    @property
    def n_steps(self) -> int:
        return int(round(self.T_tot / self.forces.Ts))


def crowd_sim_run(s: CrowdScenario, rng: np.random.Generator, keep_positions: bool = False,
                  peds: Pedestrians | None = None) -> tuple[list[CrowdState], list[MeasurementSet], list[np.ndarray]]:
    """Walk the crowd for ``s.n_steps`` steps from ``peds`` (sampled if None)."""
    if peds is None:
        peds = init_pedestrians(s.n_T, s.start_centre, s.start_size, rng)
    prev = crowd_truth_extract(peds, Ts=s.forces.Ts)
    truth, scans, positions = [], [], []
    for k in range(1, s.n_steps + 1):
        peds = crowd_sim_step(peds, s.corridor, s.forces, rng)
        state = crowd_truth_extract(peds, prev, s.forces.Ts)
        prev = state
        truth.append(state)
        scans.append(crowd_sim_measurements(peds, s.sensor, s.rho, s.clutter_radius, rng,
                                            centre=(state.x, state.y), k=k))
        if keep_positions:
            positions.append(peds.pos.copy())
    return truth, scans, positions


def transit_step(positions: Sequence[np.ndarray], gap_x: float, fraction: float = 0.5) -> int:
    """First step (1-based) at which ``fraction`` of the walkers are past ``gap_x``; -1 if never."""
    for k, pos in enumerate(positions, start=1):
        if np.mean(pos[:, 0] > gap_x) >= fraction:
            return k
    return -1


def write_scans_csv(path, scans: Sequence[MeasurementSet]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "z1", "z2"])
        for Z in scans:
            for z in Z.points:
                w.writerow([Z.k, repr(float(z[0])), repr(float(z[1]))])


def write_truth_csv(path, truth: Sequence[CrowdState]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x", "xdot", "y", "ydot", "a", "b"])
        for k, s in enumerate(truth, start=1):
            w.writerow([k] + [repr(float(v)) for v in s.as_array()])


def read_scans_csv(path, sensor: SensorParams) -> list[MeasurementSet]:
    rows: dict[int, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["k"]), []).append((float(r["z1"]), float(r["z2"])))
    n = max(rows) if rows else 0
    return [MeasurementSet.from_points(np.array(rows.get(k, []), dtype=float).reshape(-1, 2), sensor, k=k)
            for k in range(1, n + 1)]


def read_truth_csv(path) -> list[CrowdState]:
    with open(path, newline="") as fh:
        return [CrowdState(*(float(r[c]) for c in ("x", "xdot", "y", "ydot", "a", "b")))
                for r in csv.DictReader(fh)]
