"""Box PF with estimated crowd and clutter rates on the rectangular scenario.

    python scripts/rate_estimation.py -o out/rates [--runs 10]

Prints the posterior-mean crowd rate at a few steps, averaged over runs, and
the fraction of runs ending within 15% of the true rate.
"""

import argparse
from pathlib import Path

import numpy as np

from crowdtrack import harness
from crowdtrack.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "rect_estimated.cfg"))
    ap.add_argument("-o", "--out", required=True)
    ap.add_argument("--runs", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = harness.run_experiment(cfg, filters=["boxpf"], rates="estimated", n_runs=args.runs)
    harness.write_experiment(args.out, res, cfg.experiment.lock_threshold)
    recs = res.records["boxpf"]
    lam = np.stack([r.lambda_T for r in recs])
    true = recs[0].true_lambda_T[0]
    for k in (1, 10, 40, 80, 160, lam.shape[1]):
        print(f"step {k:4d}: mean lambda_T {lam[:, k - 1].mean():8.2f}  (true {true:g})")
    ok = np.abs(lam[:, -1] - true) <= 0.15 * true
    print(f"{ok.sum()}/{len(recs)} runs within 15% at the last step")


if __name__ == "__main__":
    main()
