"""Command line entry point: ``crowdtrack {simulate,track,benchmark,report}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, load_config
from .simulators import write_scans_csv, write_truth_csv

EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    n_runs = args.runs or 1
    for run, seed in enumerate(harness.run_seeds(cfg.experiment.master_seed, n_runs)):
        _, truth, scans, _, _ = harness.simulate(cfg, seed)
        d = out / f"run_{run:03d}"
        d.mkdir(parents=True, exist_ok=True)
        write_scans_csv(d / "scans.csv", scans)
        write_truth_csv(d / "truth.csv", truth)
    print(f"wrote {n_runs} run(s) to {out}")
    return 0


def _print_summary(result: harness.ExperimentResult, threshold: float) -> None:
    for name, t in result.tables.items():
        lock = harness.lock_on_step(t.column("position"), threshold) if t.n_runs else -1
        print(f"{name}: N={result.counts.get(name, '?')} runs={t.n_runs + t.n_divergent} "
              f"divergent={t.n_divergent} lock_on_step={lock}")


def _track(args) -> int:
    cfg = load_config(args.config)
    result = harness.run_experiment(cfg, filters=[args.filter], rates=args.rates, n_runs=args.runs)
    harness.write_experiment(args.out, result, cfg.experiment.lock_threshold)
    _print_summary(result, cfg.experiment.lock_threshold)
    return EXIT_DIVERGED if result.universally_divergent() else 0


def _benchmark(args) -> int:
    cfg = load_config(args.config)
    result = harness.run_experiment(cfg, n_runs=args.runs)
    harness.write_experiment(args.out, result, cfg.experiment.lock_threshold)
    _print_summary(result, cfg.experiment.lock_threshold)
    return EXIT_DIVERGED if result.universally_divergent() else 0


def _report(args) -> int:
    tables, timing = [], []
    for d in map(Path, args.dirs):
        subdirs = [p for p in sorted(d.iterdir()) if (p / "rmse.csv").exists()] if d.is_dir() else []
        if (d / "rmse.csv").exists():
            subdirs = [d]
        if not subdirs:
            raise FileNotFoundError(f"no rmse.csv under {d}")
        tables += [harness.read_rmse(p) for p in subdirs]
        for t in (d / "timing.csv", d.parent / "timing.csv"):
            if t.exists():
                timing += [r for r in harness.read_timing(t) if r not in timing]
                break
    rep = harness.compare_report(tables, timing, args.threshold)
    harness.write_report(args.out, rep)
    for f in rep.filters:
        print(f"{f}: lock_on_step={rep.lock_on[f]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdtrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate scans and ground truth")
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--runs", type=int, default=None)
    s.set_defaults(func=_simulate)

    t = sub.add_parser("track", help="Monte Carlo runs of one filter")
    t.add_argument("config")
    t.add_argument("--filter", choices=harness.FILTERS, required=True)
    t.add_argument("--rates", choices=("known", "estimated"), default=None)
    t.add_argument("-o", "--out", required=True)
    t.add_argument("--runs", type=int, default=None)
    t.set_defaults(func=_track)

    b = sub.add_parser("benchmark", help="Monte Carlo comparison of the configured filters")
    b.add_argument("config")
    b.add_argument("-o", "--out", required=True)
    b.add_argument("--runs", type=int, default=None)
    b.set_defaults(func=_benchmark)

    r = sub.add_parser("report", help="compare RMSE tables of earlier runs")
    r.add_argument("dirs", nargs="+")
    r.add_argument("-o", "--out", default=".")
    r.add_argument("--threshold", type=float, default=20.0)
    r.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
