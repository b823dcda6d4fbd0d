"""Experiment configs, presets and the sweep runner."""

from __future__ import annotations

import csv
import io
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .attack import attack_logistic, attack_shadow, build_query_matrix, denoise, inverse_logit, solve_cramer
from .data import Dataset, Schema, SplitDataset, load_csv, preprocess, split, synthesize
from .defense import DefendedEndpoint, PlainEndpoint, PrivacyAccountant, allocation_curve, apba_allocate
from .mechanisms import NoiseSpec
from .metrics import accuracy, r_test
from .models import TrainConfig, to_label, train_logistic, train_nn
from .monitor import Monitor, warning_baseline

DEFENSES = ("none", "rounding", "laplace", "gaussian", "bdpl-fixed",
            "mdp-laplace", "mdp-gaussian", "mdp-bdpl")
ATTACKS = ("qpd-linear", "qpd-shadow")
KINDS = ("attack", "monitor", "utility", "parabola")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str = "attack"
    dataset: dict = field(default_factory=lambda: {"source": "synthetic", "n": 5, "m": 400})
    model: str = "logistic"
    defenses: tuple[str, ...] = ("none",)
    attack: str = "qpd-linear"
    r_values: tuple[Any, ...] = (2,)
    eps_values: tuple[float, ...] = (1.0,)
    alpha_values: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0,)
    ci_threshold: float = 0.05
    delta_zone: float = 0.125
    decimals: int = 2
    response: str = "prob"
    strict: bool = False
    fixed_p: bool = False
    clamp: bool = False
    threshold: float | None = None  # absolute L_t; overrides alpha when set
    workers: int = 1
    record_time: bool = False

    def __post_init__(self):
        for name in ("defenses", "r_values", "eps_values", "alpha_values", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigError(f"sweep axis {name!r} is empty")
            object.__setattr__(self, name, value)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds {list(self.seeds)}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        bad = [d for d in self.defenses if d not in DEFENSES]
        if bad:
            raise ConfigError(f"unknown defenses {bad}")
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}")
        if self.model not in ("logistic", "nn"):
            raise ConfigError(f"unknown model kind {self.model!r}")
        low = 0 if self.kind == "monitor" else 1  # r=0 scores the estimators before any query
        for r in self.r_values:
            if r != "auto" and not (isinstance(r, int) and r >= low):
                raise ConfigError(f"r values must be integers >= {low} or 'auto', got {r!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    dataset: str
    defense: str
    attack: str
    r: int
    epsilon: float
    alpha: float
    seed: int
    accuracy: float
    r_test: float
    extraction_status: float
    warning_estimate: float
    epsilon_spent: float
    queries_sent: int
    wall_time: float
    status: str = "ok"
    reason: str = ""

    GROUP_KEYS = ("experiment", "dataset", "defense", "attack", "r", "epsilon", "alpha")


@dataclass(frozen=True)
class CurveRow:
    """One grid point of the budget allocation curve."""

    experiment: str
    index: int
    leakage: float
    epsilon_i: float
    closed_form: float
    status: str = "ok"
    reason: str = ""

    GROUP_KEYS = ("experiment", "index")


# tasks


def dataset_label(src: dict) -> str:
    if src.get("source", "synthetic") == "synthetic":
        return f"synthetic-n{src.get('n', 5)}-m{src.get('m', 400)}"
    return Path(src["path"]).stem


def load_task(src: dict, seed: int) -> SplitDataset:
    """Build the train/test split named by a dataset source dict."""
    source = src.get("source", "synthetic")
    if source == "synthetic":
        d = synthesize(int(src.get("n", 5)), int(src.get("m", 400)), seed=seed)
    elif source == "csv":
        schema = Schema.from_json(src["schema"]) if isinstance(src["schema"], str) else Schema.from_dict(src["schema"])
        d = preprocess(load_csv(src["path"], schema))
    else:
        raise ConfigError(f"unknown dataset source {source!r}")
    return split(d, seed)


def query_box(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    return d.X.min(axis=0), d.X.max(axis=0)


def train_target(cfg: ExperimentConfig, train: Dataset, seed: int):
    tc = TrainConfig(seed=seed)
    return train_logistic(train, tc) if cfg.model == "logistic" else train_nn(train, tc)


def stream_seed(*parts) -> int:
    """Stable per-task seed; independent of dict ordering and process."""
    return zlib.crc32(repr(parts).encode())


def make_endpoint(cfg: ExperimentConfig, defense: str, target, train: Dataset, eps: float,
                  alpha: float, seed: int):
    if defense.startswith("mdp-"):
        mech = defense[4:]
        return DefendedEndpoint(target, train, mech, eps, alpha, cfg.delta_zone, threshold=cfg.threshold,
                                response=cfg.response, fixed_p=cfg.fixed_p, clamp=cfg.clamp, seed=seed)
    kind = {"bdpl-fixed": "bdpl"}.get(defense, defense)
    spec = NoiseSpec(kind, eps, delta_zone=cfg.delta_zone, decimals=cfg.decimals)
    return PlainEndpoint(target, spec, response=cfg.response, clamp=cfg.clamp, seed=seed)


def spent(ep) -> float:
    return ep.accountant.spent if isinstance(ep, DefendedEndpoint) else ep.epsilon_spent


# one task per sweep point and seed


def _failed(cfg, defense, r, eps, alpha, seed, exc) -> ResultRow:
    return ResultRow(cfg.name, dataset_label(cfg.dataset), defense, cfg.attack, r if isinstance(r, int) else 0,
                     eps, alpha, seed, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, "failed", f"{type(exc).__name__}: {exc}")


def _attack_task(cfg: ExperimentConfig, defense: str, r, eps: float, alpha: float, seed: int) -> ResultRow:
    sp = load_task(cfg.dataset, seed)
    target = train_target(cfg, sp.train, seed)
    ep = make_endpoint(cfg, defense, target, sp.train, eps, alpha, stream_seed(seed, defense, r, eps, alpha))
    box = query_box(sp.train)
    fixed_r = None if r == "auto" else r
    if cfg.attack == "qpd-linear":
        ext = attack_logistic(ep, sp.train.n, cfg.ci_threshold, seed=seed, r=fixed_r, strict=cfg.strict, box=box)
        used_r, sent, model = ext.r, ext.queries_used, ext
    else:
        res = attack_shadow(ep, sp.train.n, cfg.ci_threshold, TrainConfig(seed=seed), seed=seed, r=fixed_r, box=box)
        used_r, sent, model = res.r, res.queries_used, res.model
    status = monitor_status(ep) if isinstance(ep, DefendedEndpoint) else 0.0
    return ResultRow(cfg.name, dataset_label(cfg.dataset), defense, cfg.attack, used_r, eps, alpha, seed,
                     accuracy(target, sp.test), r_test(target, model, sp.test), status, 0.0,
                     spent(ep), sent, 0.0)


def monitor_status(ep: DefendedEndpoint) -> float:
    return ep.monitor.extraction_status().overall


def _utility_task(cfg: ExperimentConfig, defense: str, eps: float, alpha: float, seed: int) -> ResultRow:
    """Benign traffic: every test input is asked once; accuracy is the
    agreement of the (possibly perturbed) answers with the true labels."""
    sp = load_task(cfg.dataset, seed)
    target = train_target(cfg, sp.train, seed)
    # one noise stream per (seed, defense) across the eps/alpha axes: common random numbers
    ep = make_endpoint(cfg, defense, target, sp.train, eps, alpha, stream_seed(seed, defense, "utility"))
    answers = np.array([to_label(ep.submit(x)) for x in sp.test.X])
    truth = to_label(target.predict_prob(sp.test.X))
    status = monitor_status(ep) if isinstance(ep, DefendedEndpoint) else 0.0
    return ResultRow(cfg.name, dataset_label(cfg.dataset), defense, "benign", 0, eps, alpha, seed,
                     float(np.mean(answers == sp.test.y)), float(np.mean(answers != truth)), status, 0.0,
                     spent(ep), sp.test.m, 0.0)


def monitor_vs_warning(cfg: ExperimentConfig, seed: int, eps: float, defense: str) -> list[ResultRow]:
    """Replay one duplicated QPD stream and score both estimators after
    each duplication round in ``cfg.r_values``.

    The reference status is ``1 - R_test`` of the model the attacker would
    extract from the answers collected so far.
    """
    sp = load_task(cfg.dataset, seed)
    target = train_target(cfg, sp.train, seed)
    ep = make_endpoint(cfg, defense, target, sp.train, eps, 1.0, stream_seed(seed, defense, eps, "monitor"))
    if isinstance(ep, DefendedEndpoint):
        raise ConfigError("monitor-vs-warning observes an undefended stream")
    n = sp.train.n
    qm = build_query_matrix(n, seed, box=query_box(sp.train))
    mon = Monitor(sp.train)
    samples: list[list[float]] = [[] for _ in range(n + 1)]
    rows = []
    truth = to_label(target.predict_prob(sp.test.X))
    for r in sorted(cfg.r_values):
        if r == 0:
            # nothing observed: the attacker can only guess the majority label
            majority = float(max(truth.mean(), 1 - truth.mean()))
            rows.append(ResultRow(cfg.name, dataset_label(cfg.dataset), defense, cfg.attack, 0, eps, 1.0, seed,
                                  accuracy(target, sp.test), 1 - majority, mon.extraction_status().overall,
                                  majority, spent(ep), 0, 0.0))
            continue
        while len(samples[0]) < r:
            for j, q in enumerate(qm.Q):
                z = ep.submit(q)
                samples[j].append(z)
                mon.observe(q, z)
        ext = solve_cramer(qm, inverse_logit(denoise(samples)))
        warn = warning_baseline(mon.log_rows, target, sp.test)
        rows.append(ResultRow(cfg.name, dataset_label(cfg.dataset), defense, cfg.attack, r, eps, 1.0, seed,
                              accuracy(target, sp.test), r_test(target, ext, sp.test),
                              mon.extraction_status().overall, warn, spent(ep), r * (n + 1), 0.0))
    return rows


def parabola_rows(cfg: ExperimentConfig, points: int = 100) -> list[CurveRow]:
    """Allocation at ``points`` leakage levels in [0, L_t] from the
    accountant, next to the closed form."""
    eps, lt = cfg.eps_values[0], cfg.threshold
    if lt is None:
        raise ConfigError("parabola experiment needs an absolute threshold")
    grid = np.linspace(0.0, lt, points)
    closed = allocation_curve(grid, eps, lt)
    rows = []
    for k, L in enumerate(grid):
        acct = PrivacyAccountant(eps, lt, fixed_p=True)
        acct.leakage = float(L)
        rows.append(CurveRow(cfg.name, k, float(L), apba_allocate(acct), float(closed[k])))
    return rows


def _run_task(args) -> list:
    cfg, (kind, defense, r, eps, alpha, seed) = args
    start = time.perf_counter()
    try:
        if kind == "attack":
            out = [_attack_task(cfg, defense, r, eps, alpha, seed)]
        elif kind == "utility":
            out = [_utility_task(cfg, defense, eps, alpha, seed)]
        else:
            out = monitor_vs_warning(cfg, seed, eps, defense)
    except Exception as exc:  # a failed point is reported, the sweep goes on
        out = [_failed(cfg, defense, r, eps, alpha, seed, exc)]
    if cfg.record_time:
        elapsed = time.perf_counter() - start
        out = [replace(row, wall_time=elapsed / len(out)) for row in out]
    return out


def tasks(cfg: ExperimentConfig) -> list[tuple]:
    """``(kind, defense, r, eps, alpha, seed)`` for every point of the sweep."""
    rs = cfg.r_values if cfg.kind == "attack" else (0,)
    alphas = cfg.alpha_values if cfg.kind != "monitor" else (1.0,)
    return [(cfg.kind, d, r, e, a, s) for d in cfg.defenses for r in rs
            for e in cfg.eps_values for a in alphas for s in cfg.seeds]


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every (sweep point, seed); rows come back sorted, so the output
    does not depend on the worker count or completion order."""
    if cfg.kind == "parabola":
        return parabola_rows(cfg)
    jobs = [(cfg, t) for t in tasks(cfg)]
    if cfg.workers == 1:
        chunks = [_run_task(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_task, jobs))
    rows = [row for chunk in chunks for row in chunk]
    return sorted(rows, key=lambda row: tuple(getattr(row, k) for k in row.GROUP_KEYS) + (getattr(row, "seed", 0),))


# output


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def rows_to_csv(rows) -> str:
    if not rows:
        raise ValueError("no rows to write")
    names = [f.name for f in fields(rows[0])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([_fmt(getattr(row, k)) for k in names])
    return buf.getvalue()


def summarize(rows) -> list[dict]:
    """Mean and standard deviation of every numeric column per sweep point."""
    keys = rows[0].GROUP_KEYS
    numeric = [f.name for f in fields(rows[0]) if f.name not in keys and f.name != "seed"
               and isinstance(getattr(rows[0], f.name), (int, float))]
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault(tuple(getattr(row, k) for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        entry: dict[str, Any] = dict(zip(keys, key))
        entry["count"] = len(members)
        entry["failed"] = sum(m.status != "ok" for m in members)
        for name in numeric:
            vals = np.array([getattr(m, name) for m in members], dtype=float)
            entry[f"{name}_mean"] = float(np.mean(vals))
            entry[f"{name}_std"] = float(np.std(vals))
        out.append(entry)
    return out


def emit_results(rows, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` (CSV) and a ``.summary.json`` sidecar next to it."""
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    summary = path.with_suffix(".summary.json")
    summary.write_text(json.dumps(summarize(rows), indent=2, sort_keys=True) + "\n")
    return path, summary


def failed_rows(rows) -> list:
    return [row for row in rows if row.status != "ok"]


# presets

SEEDS10 = tuple(range(10))
SYNTH5 = {"source": "synthetic", "n": 5, "m": 400}
SYNTH20 = {"source": "synthetic", "n": 20, "m": 2000}

PRESETS: dict[str, ExperimentConfig] = {
    "fig-parabola": ExperimentConfig("fig-parabola", "parabola", eps_values=(20 / 3,), threshold=10.0),
    "attack-noprotection": ExperimentConfig("attack-noprotection", dataset=SYNTH5, r_values=(2,), seeds=SEEDS10),
    "attack-laplace": ExperimentConfig("attack-laplace", dataset=SYNTH5, defenses=("laplace",),
                                       r_values=(2, 8, 32, 128, 512), seeds=SEEDS10),
    "attack-shadow": ExperimentConfig("attack-shadow", dataset=SYNTH5, model="nn", attack="qpd-shadow",
                                      r_values=(2,), seeds=(0, 1, 2)),
    "mdp-vs-bdpl": ExperimentConfig("mdp-vs-bdpl", dataset=SYNTH5,
                                    defenses=("none", "rounding", "bdpl-fixed", "mdp-laplace", "mdp-bdpl"),
                                    r_values=(2, 16, 128), seeds=SEEDS10),
    "monitor-vs-warning": ExperimentConfig("monitor-vs-warning", "monitor", dataset=SYNTH5, defenses=("laplace",),
                                           r_values=(1, 2, 4, 8, 16, 32, 64, 128), seeds=SEEDS10),
    "utility-eps": ExperimentConfig("utility-eps", "utility", dataset=SYNTH20, defenses=("mdp-bdpl",),
                                    eps_values=(0.25, 0.5, 1.0, 2.0, 4.0), response="label", seeds=SEEDS10),
    "utility-alpha": ExperimentConfig("utility-alpha", "utility", dataset=SYNTH20, defenses=("mdp-bdpl",),
                                      alpha_values=(0.25, 0.5, 1.0), response="label", seeds=SEEDS10),
}


def resolve(name_or_path: str) -> ExperimentConfig:
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return ExperimentConfig.from_json(path)
    raise ConfigError(f"unknown preset or config file {name_or_path!r}; presets: {', '.join(PRESETS)}")
