#!/usr/bin/env python3
"""Monitor and Warning estimates against the refit status over the r sweep.

Prints seed means per r and the r at which each estimator first reaches 60%.
"""

import argparse
import math
from dataclasses import replace

import numpy as np

from qpdlab.experiments import PRESETS, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=1.0, help="Laplace epsilon of the observed endpoint")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--level", type=float, default=0.6)
    args = ap.parse_args()
    cfg = replace(PRESETS["monitor-vs-warning"], eps_values=(args.epsilon,), seeds=tuple(range(args.seeds)))
    rows = [r for r in run_experiment(cfg) if r.status == "ok"]
    rs = sorted({r.r for r in rows})
    table = {name: [float(np.mean([fn(x) for x in rows if x.r == r])) for r in rs]
             for name, fn in (("true", lambda x: 1 - x.r_test), ("monitor", lambda x: x.extraction_status),
                              ("warning", lambda x: x.warning_estimate))}
    print(f"{'r':>5} {'true':>6} {'monitor':>8} {'warning':>8}")
    for i, r in enumerate(rs):
        print(f"{r:>5} {table['true'][i]:>6.3f} {table['monitor'][i]:>8.3f} {table['warning'][i]:>8.3f}")
    gap = max(abs(a - b) for a, b in zip(table["true"], table["monitor"]))
    corr = float(np.corrcoef(table["true"], table["monitor"])[0, 1])
    cross = {k: next((r for r, v in zip(rs, table[k]) if v >= args.level), math.inf) for k in ("monitor", "warning")}
    print(f"max |monitor - true| = {gap:.3f}, Pearson(monitor, true) = {corr:.3f}")
    print(f"first r reaching {args.level:.0%}: monitor {cross['monitor']}, warning {cross['warning']}")


if __name__ == "__main__":
    main()
