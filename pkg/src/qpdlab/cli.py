"""``qpdlab`` command line: train, attack, defend, experiment, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attack import AttackError, attack_logistic, attack_shadow
from .data import DataError
from .defense import DefendedEndpoint
from .experiments import (DEFENSES, ConfigError, ExperimentConfig, emit_results, failed_rows, load_task,
                          make_endpoint, query_box, resolve, run_experiment, spent)
from .metrics import evaluate
from .models import LogisticModel, ModelError, TrainConfig, load_model, save_model, train_logistic, train_nn

EXIT_OK, EXIT_FAILED = 0, 2
log = logging.getLogger("qpdlab")


def parse_source(text: str, schema: str | None = None) -> dict:
    """``synthetic:n=5,m=400`` or a CSV path (which needs ``--schema``)."""
    if text.startswith("synthetic"):
        src: dict = {"source": "synthetic"}
        _, _, opts = text.partition(":")
        for item in filter(None, opts.split(",")):
            key, _, value = item.partition("=")
            if key not in ("n", "m"):
                raise ConfigError(f"unknown synthetic option {key!r}")
            src[key] = int(value)
        return src
    if schema is None:
        raise ConfigError("CSV data needs --schema")
    return {"source": "csv", "path": text, "schema": schema}


def _r_value(text: str):
    return text if text == "auto" else int(text)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    sp = load_task(parse_source(args.data, args.schema), args.seed)
    cfg = TrainConfig(args.lr, args.epochs, args.hidden, args.seed)
    model = train_logistic(sp.train, cfg) if args.model == "logistic" else train_nn(sp.train, cfg)
    out = Path(args.out or "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    res = evaluate(model, model, sp.test)
    print(f"trained {args.model} on {sp.train.m} rows; test accuracy {res.accuracy:.4f} -> {out}")
    return EXIT_OK


def _endpoint(args, target, train):
    cfg = ExperimentConfig("cli", response=args.response, fixed_p=args.fixed_p, clamp=args.clamp,
                           delta_zone=args.delta_zone)
    return make_endpoint(cfg, args.defense, target, train, args.epsilon, args.alpha, args.seed)


def cmd_attack(args) -> int:
    sp = load_task(parse_source(args.data, args.schema), args.seed)
    target = load_model(args.target)
    ep = _endpoint(args, target, sp.train)
    r = None if args.r == "auto" else args.r
    trace: list = []
    if isinstance(target, LogisticModel) and not args.shadow:
        ext = attack_logistic(ep, sp.train.n, args.ci_threshold, seed=args.seed, r=r, strict=args.strict_alg1,
                              box=query_box(sp.train), trace=trace)
        model, used_r, sent = ext, ext.r, ext.queries_used
        coef = {"a": ext.a.tolist(), "b": ext.b}
    else:
        res = attack_shadow(ep, sp.train.n, args.ci_threshold, TrainConfig(seed=args.seed), seed=args.seed, r=r,
                            box=query_box(sp.train))
        model, used_r, sent = res.model, res.r, res.queries_used
        coef = res.model.to_dict()
    m = evaluate(target, model, sp.test)
    report = {
        "defense": args.defense, "r": used_r, "queries_sent": sent, "search": [list(t) for t in trace],
        "coefficients": coef, "accuracy": m.accuracy, "r_test": m.r_test, "one_minus_r_test": m.one_minus_r_test,
        "epsilon_spent": spent(ep),
        "extraction_status": ep.monitor.extraction_status().overall if isinstance(ep, DefendedEndpoint) else None,
    }
    out = Path(args.out or "attack.json")
    _write_json(out, report)
    print(f"r={used_r} queries={sent} 1-R_test={m.one_minus_r_test:.4f} -> {out}")
    return EXIT_OK


def cmd_defend(args) -> int:
    """Flood a defended endpoint with a QPD attack and save its state."""
    if not args.defense.startswith("mdp-"):
        raise ConfigError("defend expects an mdp-* defense")
    sp = load_task(parse_source(args.data, args.schema), args.seed)
    target = load_model(args.target)
    ep = _endpoint(args, target, sp.train)
    r = 16 if args.r == "auto" else args.r
    ext = attack_logistic(ep, sp.train.n, seed=args.seed, r=r, box=query_box(sp.train))
    out = Path(args.out or "defend")
    out.mkdir(parents=True, exist_ok=True)
    ep.accountant.export_history(out / "budget.csv")
    ep.monitor.save(out / "monitor.json")
    status = ep.monitor.extraction_status()
    m = evaluate(target, ext, sp.test)
    _write_json(out / "summary.json", {
        "queries": ep.queries, "epsilon_spent": ep.accountant.spent, "leakage": ep.monitor.leakage,
        "threshold": ep.accountant.threshold, "refused": ep.refused, "extraction_status": status.overall,
        "one_minus_r_test": m.one_minus_r_test,
    })
    print(f"{ep.queries} queries, eps spent {ep.accountant.spent:.4f}, status {status.overall:.3f}, "
          f"1-R_test {m.one_minus_r_test:.4f} -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = resolve(args.config)
    overrides = {"workers": args.workers, "record_time": args.record_time}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    for flag, name in (("strict_alg1", "strict"), ("fixed_p", "fixed_p"), ("clamp", "clamp")):
        if getattr(args, flag):
            overrides[name] = True
    cfg = replace(cfg, **overrides)
    rows = run_experiment(cfg)
    out = Path(args.out or "results") / f"{cfg.name}.csv"
    csv_path, summary = emit_results(rows, out)
    bad = failed_rows(rows)
    print(f"{cfg.name}: {len(rows)} rows, {len(bad)} failed -> {csv_path}, {summary}")
    for row in bad:
        print(f"  failed: {row.reason}", file=sys.stderr)
    return EXIT_FAILED if bad else EXIT_OK


def cmd_report(args) -> int:
    failed = 0
    for path in args.results:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            print(f"{path}: empty")
            continue
        failed += sum(r.get("status", "ok") != "ok" for r in rows)
        if "epsilon_i" in rows[0]:
            gap = max(abs(float(r["epsilon_i"]) - float(r["closed_form"])) for r in rows)
            print(f"{path}: {len(rows)} grid points, max |eps_i - closed form| = {gap:.3e}")
            continue
        keys = ("defense", "r", "epsilon", "alpha")
        groups: dict[tuple, list] = {}
        for r in rows:
            if r.get("status", "ok") == "ok":
                groups.setdefault(tuple(r[k] for k in keys), []).append(r)
        print(f"{path}")
        print(f"  {'defense':<12} {'r':>5} {'eps':>6} {'alpha':>5} {'acc':>6} {'1-R_test':>8} {'monitor':>7} "
              f"{'warning':>7} {'seeds':>5}")
        for key, members in groups.items():
            mean = {c: np.mean([float(m[c]) for m in members])
                    for c in ("accuracy", "r_test", "extraction_status", "warning_estimate")}
            print(f"  {key[0]:<12} {key[1]:>5} {float(key[2]):>6.3g} {float(key[3]):>5.3g} {mean['accuracy']:>6.3f} "
                  f"{1 - mean['r_test']:>8.3f} {mean['extraction_status']:>7.3f} {mean['warning_estimate']:>7.3f} "
                  f"{len(members):>5}")
    return EXIT_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--strict-alg1", action="store_true",
                        help="re-send every duplicate on each r doubling instead of reusing answers")
    common.add_argument("--fixed-p", action="store_true", help="keep the allocation scale p from the full budget")
    common.add_argument("--clamp", action="store_true", help="clamp noisy confidences to [0, 1]")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", default="synthetic:n=5,m=400", help="'synthetic:n=5,m=400' or a CSV path")
    data.add_argument("--schema", default=None, help="schema JSON for CSV data")

    def endpoint(default_defense: str) -> argparse.ArgumentParser:
        # built per subcommand: parents share action objects, so defaults cannot differ otherwise
        ep = argparse.ArgumentParser(add_help=False)
        ep.add_argument("--target", required=True, help="model JSON written by 'train'")
        ep.add_argument("--defense", default=default_defense, choices=DEFENSES)
        ep.add_argument("--epsilon", type=float, default=1.0)
        ep.add_argument("--alpha", type=float, default=1.0)
        ep.add_argument("--delta-zone", type=float, default=0.125)
        ep.add_argument("--response", choices=("prob", "label"), default="prob")
        ep.add_argument("--r", type=_r_value, default="auto", help="duplication count or 'auto'")
        ep.add_argument("--ci-threshold", type=float, default=0.05)
        return ep

    p = argparse.ArgumentParser(prog="qpdlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common, data], help="train a target model")
    t.add_argument("--model", choices=("logistic", "nn"), default="logistic")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--hidden", type=int, default=8)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common, data, endpoint("none")], help="run QPD against a target")
    a.add_argument("--shadow", action="store_true", help="fit a shadow network even for a logistic target")
    a.set_defaults(func=cmd_attack)

    d = sub.add_parser("defend", parents=[common, data, endpoint("mdp-laplace")], help="flood an MDP endpoint and save its state")
    d.set_defaults(func=cmd_defend)

    e = sub.add_parser("experiment", parents=[common], help="run a preset or a config JSON")
    e.add_argument("config", help="preset name or path to config.json")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--record-time", action="store_true", help="fill wall_time (makes the CSV non-reproducible)")
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", parents=[common], help="summarise result CSVs")
    r.add_argument("results", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("train", "attack", "defend") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, DataError, ModelError, AttackError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
