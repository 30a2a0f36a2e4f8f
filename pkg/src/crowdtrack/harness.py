"""Monte Carlo orchestration, RMSE tables, timing and file output.

Every run gets its own seed derived from the experiment's master seed; within a
run all filters see the same simulated scans.  Output files are written in run
order, so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxpf import BoxPF
from .config import FILTERS, Config
from .cpf import CPF
from .models import STATE_NAMES, CrowdState, MeasurementSet
from .simulators import crowd_sim_run, crowd_truth_extract, init_pedestrians, rect_sim_run
from .sirpf import SIRPF

WORKERS_ENV = "CROWDTRACK_WORKERS"
COMPONENTS = STATE_NAMES + ("position",)
RATE_COMPONENTS = ("lambda_T", "lambda_C")


@dataclass
class RunRecord:
    run: int
    seed: int
    filter: str
    n_particles: int
    truth: np.ndarray  # (K, 6)
    estimate: np.ndarray  # (K, 6)
    lo: np.ndarray | None  # (K, 6) box estimate, box PF only
    hi: np.ndarray | None
    lambda_T: np.ndarray  # (K,) estimated rates (NaN when not estimated)
    lambda_C: np.ndarray
    true_lambda_T: np.ndarray
    true_lambda_C: np.ndarray
    n_eff: np.ndarray
    inconsistent: np.ndarray  # (K,) all weights vanished at that step
    step_s: np.ndarray  # wall clock per step
    diverged: bool = False

    @property
    def n_steps(self) -> int:
        return self.truth.shape[0]

    @property
    def position_error(self) -> np.ndarray:
        e = self.estimate - self.truth
        return np.hypot(e[:, 0], e[:, 2])


@dataclass
class RmseTable:
    filter: str
    components: tuple
    rmse: np.ndarray  # (K, C)
    n_runs: int
    n_divergent: int

    @property
    def n_steps(self) -> int:
        return self.rmse.shape[0]

    def column(self, component: str) -> np.ndarray:
        return self.rmse[:, self.components.index(component)]


# ---------------------------------------------------------------------------
# seeds and single runs


def run_seeds(master_seed: int, n_runs: int) -> list[int]:
    children = np.random.SeedSequence(master_seed).spawn(n_runs)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def simulate(cfg: Config, seed: int, n_steps: int | None = None):
    """Truth, scans and the per-step true rates for one run."""
    rng = np.random.default_rng([seed, 0])
    s = cfg.scenario
    if s.kind == "rect":
        sc = cfg.rect_scenario()
        if n_steps is not None:
            sc = _shorter(sc, n_steps)
        truth, scans = rect_sim_run(sc, rng)
        lam_t = np.full(len(truth), s.lambda_T)
        lam_c = np.array([sc.clutter_rate(x) for x in truth])
        start = sc.initial
    else:
        sc = cfg.crowd_scenario()
        if n_steps is not None:
            sc = _shorter(sc, n_steps)
        peds = init_pedestrians(sc.n_T, sc.start_centre, sc.start_size, rng)
        start = crowd_truth_extract(peds, Ts=sc.forces.Ts)
        truth, scans, _ = crowd_sim_run(sc, rng, peds=peds)
        lam_t = np.full(len(truth), float(sc.n_T))
        lam_c = np.full(len(truth), sc.rho * math.pi * sc.clutter_radius**2)
    return start, truth, scans, lam_t, lam_c


def _shorter(sc, n_steps: int):
    Ts = sc.dynamics.Ts if hasattr(sc, "dynamics") else sc.forces.Ts
    return replace(sc, T_tot=n_steps * Ts)


def make_filter(cfg: Config, name: str, start: CrowdState, rng: np.random.Generator,
                n_particles: int | None = None, rates: str | None = None):
    prior = cfg.prior_box(start.as_array())
    dyn, sensor = cfg.filter_dynamics, cfg.filter_sensor
    if name == "boxpf":
        return BoxPF(prior, dyn, sensor, cfg.boxpf_config(rates, n_particles), rng)
    if name == "cpf":
        return CPF(prior, dyn, sensor, cfg.cpf_config(n_particles), rng)
    if name == "sirpf":
        return SIRPF(prior, dyn, sensor, cfg.sir_config(n_particles), rng)
    raise ValueError(f"unknown filter {name!r}")


def track(cfg: Config, name: str, run: int, seed: int, start: CrowdState, truth: Sequence[CrowdState],
          scans: Sequence[MeasurementSet], lam_t, lam_c, n_particles: int | None = None,
          rates: str | None = None) -> RunRecord:
    rng = np.random.default_rng([seed, 1 + FILTERS.index(name)])
    f = make_filter(cfg, name, start, rng, n_particles, rates)
    K = len(scans)
    est = np.empty((K, 6))
    lo = np.empty((K, 6)) if name == "boxpf" else None
    hi = np.empty((K, 6)) if name == "boxpf" else None
    lt, lc, ne = np.full(K, np.nan), np.full(K, np.nan), np.empty(K)
    bad = np.zeros(K, dtype=bool)
    dt = np.empty(K)
    for k, Z in enumerate(scans):
        t0 = time.perf_counter()
        r = f.step(Z)
        dt[k] = time.perf_counter() - t0
        est[k] = r.estimate.as_array()
        if lo is not None:
            lo[k], hi[k] = r.box.lo, r.box.hi
        lt[k], lc[k], ne[k], bad[k] = r.lambda_T, r.lambda_C, r.n_eff, r.diverged
    if name != "boxpf" or cfg.boxpf_config(rates).rates != "estimated":
        lt[:], lc[:] = np.nan, np.nan
    return RunRecord(run, seed, name, f.n_particles, np.array([s.as_array() for s in truth]), est, lo, hi,
                     lt, lc, np.asarray(lam_t, float), np.asarray(lam_c, float), ne, bad, dt)


def flag_divergence(rec: RunRecord, threshold: float, window: float) -> bool:
    """Divergent if every weight vanished at some step, or if the mean position
    error over the final ``window`` fraction of the run exceeds ``threshold``."""
    tail = max(1, int(math.ceil(window * rec.n_steps)))
    lost = float(np.mean(rec.position_error[-tail:])) > threshold
    return bool(rec.inconsistent.any() or lost)


def _run_task(args) -> list[RunRecord]:
    cfg, run, seed, plan, rates = args
    start, truth, scans, lam_t, lam_c = simulate(cfg, seed)
    out = []
    for name, n in plan:
        rec = track(cfg, name, run, seed, start, truth, scans, lam_t, lam_c, n, rates)
        rec.diverged = flag_divergence(rec, cfg.experiment.divergence_threshold, cfg.experiment.divergence_window)
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# aggregation


def rmse_table(records: Sequence[RunRecord], include_rates: bool | None = None) -> RmseTable:
    """Per-step RMSE over the non-divergent runs, per component."""
    if not records:
        raise ValueError("no runs")
    name = records[0].filter
    if include_rates is None:
        include_rates = bool(np.isfinite(records[0].lambda_T).all())
    comps = COMPONENTS + (RATE_COMPONENTS if include_rates else ())
    good = [r for r in records if not r.diverged]
    K = records[0].n_steps
    if not good:
        return RmseTable(name, comps, np.full((K, len(comps)), np.nan), 0, len(records))
    err = np.stack([r.estimate - r.truth for r in good])  # (R, K, 6)
    cols = [np.sqrt(np.mean(err**2, axis=0))]
    cols.append(np.sqrt(np.mean(err[..., 0] ** 2 + err[..., 2] ** 2, axis=0))[:, None])
    if include_rates:
        for attr in RATE_COMPONENTS:
            e = np.stack([getattr(r, attr) - getattr(r, "true_" + attr) for r in good])
            cols.append(np.sqrt(np.mean(e**2, axis=0))[:, None])
    return RmseTable(name, comps, np.hstack(cols), len(good), len(records) - len(good))


def lock_on_step(position_rmse: np.ndarray, threshold: float) -> int:
    """First (1-based) step with position RMSE below ``threshold``; -1 if never."""
    below = np.flatnonzero(np.asarray(position_rmse) < threshold)
    return int(below[0]) + 1 if below.size else -1


@dataclass
class TimingRow:
    filter: str
    n_particles: int
    mean_s: float
    std_s: float


def timing_rows(records_by_filter: dict[str, list[RunRecord]]) -> list[TimingRow]:
    rows = []
    for name, recs in records_by_filter.items():
        per_run = np.array([r.step_s.sum() for r in recs])
        rows.append(TimingRow(name, recs[0].n_particles, float(per_run.mean()),
                              float(per_run.std(ddof=1)) if len(per_run) > 1 else 0.0))
    return rows


# ---------------------------------------------------------------------------
# particle-count parity


def budget_counts(cfg: Config, filters: Sequence[str], rates: str | None = None) -> dict[str, int]:
    """Particle counts giving every filter roughly the reference filter's time per step.

    Each filter is timed on a short probe run; cost is taken as linear in the
    particle count.  The result depends on the machine and is not reproducible.
    """
    e = cfg.experiment
    start, truth, scans, lam_t, lam_c = simulate(cfg, run_seeds(e.master_seed, 1)[0], e.probe_steps)

    def seconds(name, n):
        rec = track(cfg, name, 0, 0, start, truth, scans, lam_t, lam_c, n, rates)
        return float(np.median(rec.step_s))

    ref = e.budget_reference
    counts = {ref: cfg.n_particles(ref)}
    t_ref = seconds(ref, counts[ref])
    for name in filters:
        if name == ref:
            continue
        n0 = e.probe_particles
        counts[name] = max(1, int(round(n0 * t_ref / seconds(name, n0))))
    return counts


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class ExperimentResult:
    records: dict[str, list[RunRecord]]
    tables: dict[str, RmseTable]
    timing: list[TimingRow]
    counts: dict[str, int] = field(default_factory=dict)

    def universally_divergent(self) -> bool:
        return any(t.n_runs == 0 for t in self.tables.values())


def worker_count(cfg: Config) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return cfg.experiment.workers


def run_experiment(cfg: Config, filters: Sequence[str] | None = None, rates: str | None = None,
                   workers: int | None = None, n_runs: int | None = None,
                   counts: dict[str, int] | None = None) -> ExperimentResult:
    """Monte Carlo runs of ``filters``; ``counts`` fixes particle numbers and skips the parity policy."""
    e = cfg.experiment
    filters = tuple(filters or e.filters)
    n_runs = n_runs or e.n_runs
    if counts is not None:
        counts = {name: counts.get(name) or cfg.n_particles(name) for name in filters}
    elif e.parity == "equal_budget" and len(filters) > 1:
        counts = budget_counts(cfg, filters, rates)
    else:
        counts = {name: cfg.n_particles(name) for name in filters}
    plan = tuple((name, counts[name]) for name in filters)
    seeds = run_seeds(e.master_seed, n_runs)
    tasks = [(cfg, i, s, plan, rates) for i, s in enumerate(seeds)]
    workers = workers or worker_count(cfg)
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    records = {name: [] for name in filters}
    for recs in sorted(results, key=lambda rs: rs[0].run):
        for r in recs:
            records[r.filter].append(r)
    tables = {name: rmse_table(recs) for name, recs in records.items()}
    return ExperimentResult(records, tables, timing_rows(records), counts)


# ---------------------------------------------------------------------------
# files


def _f(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_runs_csv(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "k", "component", "truth", "estimate", "lo", "hi"])
        for r in records:
            for k in range(r.n_steps):
                for c, comp in enumerate(STATE_NAMES):
                    lo = r.lo[k, c] if r.lo is not None else None
                    hi = r.hi[k, c] if r.hi is not None else None
                    w.writerow([r.run, r.seed, k + 1, comp, _f(r.truth[k, c]), _f(r.estimate[k, c]), _f(lo), _f(hi)])


def write_steps_csv(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "k", "lambda_T", "lambda_C", "n_eff", "inconsistent"])
        for r in records:
            for k in range(r.n_steps):
                w.writerow([r.run, r.seed, k + 1, _f(r.lambda_T[k]), _f(r.lambda_C[k]), _f(r.n_eff[k]),
                            int(r.inconsistent[k])])


def write_divergence_csv(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "diverged", "final_position_error"])
        for r in records:
            w.writerow([r.run, r.seed, int(r.diverged), _f(r.position_error[-1])])


def rmse_rows(t: RmseTable) -> list[dict]:
    return [{"k": k + 1, "component": comp, "rmse": None if math.isnan(t.rmse[k, c]) else float(t.rmse[k, c]),
             "n_runs": t.n_runs, "n_divergent": t.n_divergent}
            for k in range(t.n_steps) for c, comp in enumerate(t.components)]


def write_rmse(dirpath: Path, t: RmseTable) -> None:
    rows = rmse_rows(t)
    with open(dirpath / "rmse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "component", "rmse", "n_runs", "n_divergent"])
        for r in rows:
            w.writerow([r["k"], r["component"], _f(r["rmse"]), r["n_runs"], r["n_divergent"]])
    (dirpath / "rmse.json").write_text(json.dumps(rows, indent=1) + "\n")


def read_rmse(path) -> RmseTable:
    path = Path(path)
    if path.is_dir():
        path = path / "rmse.csv"
    data: dict[int, dict[str, float]] = {}
    comps: list[str] = []
    n_runs = n_div = 0
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            k, comp = int(r["k"]), r["component"]
            if comp not in comps:
                comps.append(comp)
            data.setdefault(k, {})[comp] = float(r["rmse"]) if r["rmse"] else math.nan
            n_runs, n_div = int(r["n_runs"]), int(r["n_divergent"])
    ks = sorted(data)
    if ks != list(range(1, len(ks) + 1)):
        raise ValueError(f"{path}: steps are not contiguous from 1")
    arr = np.array([[data[k].get(c, math.nan) for c in comps] for k in ks])
    return RmseTable(path.parent.name, tuple(comps), arr, n_runs, n_div)


def write_timing(dirpath: Path, rows: Sequence[TimingRow]) -> None:
    with open(dirpath / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "n_particles", "mean_s", "std_s"])
        for r in rows:
            w.writerow([r.filter, r.n_particles, _f(r.mean_s), _f(r.std_s)])
    (dirpath / "timing.json").write_text(json.dumps([r.__dict__ for r in rows], indent=1) + "\n")


def read_timing(path) -> list[TimingRow]:
    with open(path, newline="") as fh:
        return [TimingRow(r["filter"], int(r["n_particles"]), float(r["mean_s"]), float(r["std_s"]))
                for r in csv.DictReader(fh)]


def write_experiment(outdir, result: ExperimentResult, threshold: float = 20.0) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in result.records.items():
        d = out / name
        d.mkdir(exist_ok=True)
        write_runs_csv(d / "runs.csv", recs)
        write_steps_csv(d / "steps.csv", recs)
        write_divergence_csv(d / "divergence.csv", recs)
        write_rmse(d, result.tables[name])
    write_timing(out, result.timing)
    if len(result.tables) > 1:
        write_report(out, compare_report(list(result.tables.values()), result.timing, threshold))


# ---------------------------------------------------------------------------
# comparison


@dataclass
class Report:
    components: tuple
    filters: tuple
    rmse: np.ndarray  # (K, F, C)
    lock_on: dict[str, int]
    threshold: float
    timing: list[TimingRow]


def compare_report(tables: Sequence[RmseTable], timing: Sequence[TimingRow] = (),
                   threshold: float = 20.0) -> Report:
    if len(tables) < 2:
        raise ValueError("need at least two RMSE tables to compare")
    K = tables[0].n_steps
    for t in tables:
        if t.n_steps != K:
            raise ValueError(f"step grids differ: {tables[0].filter} has {K} steps, {t.filter} has {t.n_steps}")
    comps = tuple(c for c in tables[0].components if all(c in t.components for t in tables))
    arr = np.stack([np.stack([t.column(c) for c in comps], axis=1) for t in tables], axis=1)
    lock = {t.filter: lock_on_step(t.column("position"), threshold) for t in tables}
    return Report(comps, tuple(t.filter for t in tables), arr, lock, threshold, list(timing))


def write_report(outdir, rep: Report) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"{f}_{c}" for f in rep.filters for c in rep.components])
        for k in range(rep.rmse.shape[0]):
            w.writerow([k + 1] + [_f(rep.rmse[k, i, j]) for i in range(len(rep.filters))
                                  for j in range(len(rep.components))])
    with open(out / "lockon.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "lock_on_step", "threshold"])
        for f in rep.filters:
            w.writerow([f, rep.lock_on[f], _f(rep.threshold)])
    summary = {"threshold": rep.threshold, "lock_on": rep.lock_on,
               "timing": [r.__dict__ for r in rep.timing]}
    (out / "report.json").write_text(json.dumps(summary, indent=1) + "\n")
