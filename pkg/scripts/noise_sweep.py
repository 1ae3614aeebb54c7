#!/usr/bin/env python3
"""Mean CVR-IDF1 per arm while one noise source is scaled from 0 to its default.

Writes a plot-ready CSV (source,scale,arm,cvr_idf1,cvr_ma) to stdout.
"""

import argparse
import dataclasses

from crvtrack.config import RunConfig
from crvtrack.experiment import run_pipeline

SOURCES = ("frag_prob", "switch_prob", "drift_prob", "embed_noise_sigma")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=4)
    args = ap.parse_args()
    base = RunConfig(n_seeds=args.n_seeds)
    print("source,scale,arm,cvr_idf1,cvr_ma")
    for source in SOURCES:
        full = getattr(base.scene, source)
        for k in range(args.steps + 1):
            scale = k / args.steps
            scene = dataclasses.replace(base.scene, **{source: full * scale})
            report = run_pipeline(dataclasses.replace(base, scene=scene))
            for arm, m in report.means.items():
                print(f"{source},{scale:.3f},{arm},{m['cvr_idf1']:.6f},{m['cvr_ma']:.6f}")


if __name__ == "__main__":
    main()
