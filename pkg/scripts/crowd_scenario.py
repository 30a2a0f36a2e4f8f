"""Box PF and CPF on the pedestrian crowd walking through a bottleneck.

    python scripts/crowd_scenario.py -o out/crowd [--runs 5]

Prints the extent-a RMSE before the bottleneck (steps 200-400) and after the
last walker has passed the gap.
"""

import argparse
from pathlib import Path

import numpy as np

from crowdtrack import harness
from crowdtrack.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "crowd.cfg"))
    ap.add_argument("-o", "--out", required=True)
    ap.add_argument("--runs", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = harness.run_experiment(cfg, n_runs=args.runs)
    harness.write_experiment(args.out, res, cfg.experiment.lock_threshold)
    gap_x = cfg.scenario.gap_x
    for name, recs in res.records.items():
        # every walker is past the gap once the left edge of the bounding rectangle is
        through = max(int(np.argmax(r.truth[:, 0] - 0.5 * r.truth[:, 4] > gap_x)) + 1 for r in recs)
        err = np.stack([r.estimate[:, 4] - r.truth[:, 4] for r in recs])
        rmse = np.sqrt(np.mean(err**2, axis=0))
        print(f"{name:6s} N={res.counts[name]:<5d} extent-a RMSE: steps 200-400 {rmse[199:400].mean():6.2f} m, "
              f"after step {through} {rmse[through:].mean():6.2f} m")


if __name__ == "__main__":
    main()
