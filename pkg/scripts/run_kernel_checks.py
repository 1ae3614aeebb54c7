#!/usr/bin/env python3
"""Gradient and invariant checks for every kernel; exits nonzero on failure.

    python3 scripts/run_kernel_checks.py [--epsilon 1e-5] [--seed 0] [--out report.jsonl]
"""

import sys

from crvtrack.cli import main

if __name__ == "__main__":
    sys.exit(main(["kernel-check", *sys.argv[1:]]))
