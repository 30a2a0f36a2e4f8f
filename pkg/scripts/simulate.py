"""Write simulated scans and ground truth as CSV.

    python scripts/simulate.py configs/crowd.cfg -o out/sim [--runs 3]

One directory per run with scans.csv (k, z1, z2) and truth.csv
(k, x, xdot, y, ydot, a, b); equivalent to ``crowdtrack simulate``.
"""

import sys

from crowdtrack.cli import main

if __name__ == "__main__":
    sys.exit(main(["simulate"] + sys.argv[1:]))
