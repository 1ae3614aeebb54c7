#!/usr/bin/env python3
"""Run the 20-seed ablation benchmark and print the per-arm table.

    python3 scripts/run_benchmark.py --out runs/bench [--config cfg.yaml] [--jobs 4]
"""

import sys

from crvtrack.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
