"""Box PF vs CPF vs SIR PF on the rectangular scenario, known rates.

    python scripts/rect_benchmark.py -o out/rect [--runs 20] [--config configs/rect.cfg]

Particle counts follow the config's parity policy (equal wall-clock budget by
default, calibrated on this machine).  Writes the usual benchmark files and
prints the lock-on step and timing of each filter.
"""

import argparse
from pathlib import Path

from crowdtrack import harness
from crowdtrack.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "rect.cfg"))
    ap.add_argument("-o", "--out", required=True)
    ap.add_argument("--runs", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = harness.run_experiment(cfg, n_runs=args.runs)
    harness.write_experiment(args.out, res, cfg.experiment.lock_threshold)
    times = {r.filter: r for r in res.timing}
    for name, t in res.tables.items():
        lock = harness.lock_on_step(t.column("position"), cfg.experiment.lock_threshold) if t.n_runs else -1
        print(f"{name:6s} N={res.counts[name]:<6d} lock-on step {lock:4d}  divergent {t.n_divergent:3d}/"
              f"{t.n_runs + t.n_divergent}  {times[name].mean_s:.2f} s per run")


if __name__ == "__main__":
    main()
