#!/usr/bin/env python3
"""Run presets, write their CSV and summary files, and print per-point means.

    python scripts/run_presets.py                  # every preset into results/
    python scripts/run_presets.py mdp-vs-bdpl --workers 4
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from qpdlab.experiments import PRESETS, emit_results, failed_rows, run_experiment, summarize

COLUMNS = ("accuracy", "r_test", "extraction_status", "warning_estimate", "epsilon_spent", "epsilon_i")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("presets", nargs="*", default=list(PRESETS), help=f"any of {', '.join(PRESETS)}")
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    unknown = sorted(set(args.presets) - set(PRESETS))
    if unknown:
        ap.error(f"unknown presets {unknown}")
    status = 0
    for name in args.presets:
        t0 = time.perf_counter()
        rows = run_experiment(replace(PRESETS[name], workers=args.workers))
        csv_path, _ = emit_results(rows, Path(args.out) / f"{name}.csv")
        bad = failed_rows(rows)
        print(f"== {name}: {len(rows)} rows, {len(bad)} failed, {time.perf_counter() - t0:.1f}s -> {csv_path}")
        if name == "fig-parabola":
            gap = max(abs(r.epsilon_i - r.closed_form) for r in rows)
            print(f"   max |eps_i - closed form| over {len(rows)} points: {gap:.2e}")
        else:
            for entry in summarize(rows):
                point = " ".join(f"{k}={entry[k]}" for k in ("defense", "r", "epsilon", "alpha"))
                means = " ".join(f"{c}={entry[c + '_mean']:.3f}" for c in COLUMNS if c + "_mean" in entry)
                print(f"   {point} n={entry['count']} {means}")
        status = status or (2 if bad else 0)
    return status


if __name__ == "__main__":
    sys.exit(main())
