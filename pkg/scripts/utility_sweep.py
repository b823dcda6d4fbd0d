#!/usr/bin/env python3
"""Defended-model accuracy on benign traffic over epsilon and alpha, with
the query index at which the endpoint starts refusing."""

import argparse

import numpy as np

from qpdlab.experiments import PRESETS, load_task, make_endpoint, stream_seed, train_target


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--defense", default="mdp-bdpl", choices=("mdp-laplace", "mdp-gaussian", "mdp-bdpl"))
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    cfg = PRESETS["utility-eps"]
    points = [(e, 1.0) for e in cfg.eps_values] + [(1.0, a) for a in PRESETS["utility-alpha"].alpha_values[:-1]]
    print(f"{'eps':>5} {'alpha':>5} {'accuracy':>8} {'answered acc':>12} {'refusal at':>10}")
    for eps, alpha in points:
        acc, answered, refusal = [], [], []
        for seed in range(args.seeds):
            sp = load_task(cfg.dataset, seed)
            target = train_target(cfg, sp.train, seed)
            ep = make_endpoint(cfg, args.defense, target, sp.train, eps, alpha,
                               stream_seed(seed, args.defense, "utility"))
            outs = [ep.respond(x) for x in sp.test.X]
            labels = np.array([o.value >= 0.5 for o in outs], dtype=int)
            k = next((i for i, o in enumerate(outs) if o.refused), len(outs))
            acc.append(np.mean(labels == sp.test.y))
            answered.append(np.mean(labels[:k] == sp.test.y[:k]) if k else np.nan)
            refusal.append(k)
        print(f"{eps:>5} {alpha:>5} {np.mean(acc):>8.3f} {np.nanmean(answered):>12.3f} {np.mean(refusal):>10.1f}")


if __name__ == "__main__":
    main()
