"""Extraction-status monitoring from the query/response stream, plus the
surrogate decision-tree Warning baseline."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .models import to_label

logger = logging.getLogger(__name__)


class MonitorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InfoVector:
    per_tuple: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.per_tuple))


@dataclass
class ExtractionStatus:
    per_class: dict[int, float]
    raw_overall: float
    overall: float
    clipped: bool
    empty_classes: tuple[int, ...] = ()


def _check_matrix(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[:, None]
    if M.size == 0:
        raise MonitorError("empty matrix")
    return M


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def joint_entropy(M) -> float:
    """Empirical joint entropy (bits) of the rows of a discrete matrix.

    Counting joint configurations directly equals the chain-rule sum of
    conditional entropies.
    """
    M = _check_matrix(M)
    _, counts = np.unique(M, axis=0, return_counts=True)
    return _entropy_from_counts(counts)


def marginal_entropies(M) -> np.ndarray:
    M = _check_matrix(M)
    return np.array([_entropy_from_counts(np.unique(col, return_counts=True)[1]) for col in M.T])


def surprisal(M) -> np.ndarray:
    """Per-row ``-sum_j log2 p_j(value)`` under the per-column empirical marginals."""
    M = _check_matrix(M)
    out = np.zeros(M.shape[0])
    for col in M.T:
        values, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
        out -= np.log2(counts[inverse.reshape(-1)] / M.shape[0])
    return out


def per_tuple_info(M, scale: float | None = None) -> InfoVector:
    """Split the joint entropy of ``M`` across its rows in proportion to
    each row's surprisal, so that ``total == joint_entropy(M) * scale``.

    ``scale`` defaults to the row count, which leaves the surprisals
    untouched when the columns are independent.
    """
    M = _check_matrix(M)
    s = surprisal(M)
    scale = float(M.shape[0]) if scale is None else float(scale)
    total = s.sum()
    if total <= 0:
        return InfoVector(np.zeros(M.shape[0]))
    return InfoVector(s * (joint_entropy(M) * scale / total))


def pcc(u, v) -> float:
    """Pearson correlation; 0 when either vector is constant."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise MonitorError(f"length mismatch {u.shape} vs {v.shape}")
    if u.size < 2:
        raise MonitorError("need at least two entries")
    du, dv = u - u.mean(), v - v.mean()
    den = math.sqrt(float(du @ du) * float(dv @ dv))
    if den == 0.0:
        return 0.0
    return float(np.clip((du @ dv) / den, -1.0, 1.0))


def _unit_rows(U: np.ndarray) -> np.ndarray:
    # row-centred, unit-norm rows: a dot product of two such rows is their PCC
    C = U - U.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    out = np.zeros_like(C)
    np.divide(C, norms, out=out, where=norms > 0)
    return out


def _key(u) -> bytes:
    return (np.asarray(u, dtype=float) + 0.0).tobytes()  # folds -0.0 into 0.0


class _Log:
    """Append-only row store with amortised growth."""

    def __init__(self, width: int):
        self.size = 0
        self.rows = np.empty((64, width))
        self.unit = np.empty((64, width))
        self.info = np.empty(64)
        self.cls = np.empty(64, dtype=np.int64)

    def append(self, row, unit, info, cls):
        if self.size == len(self.info):
            cap = 2 * self.size
            for name in ("rows", "unit", "info", "cls"):
                old = getattr(self, name)
                new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
                new[: self.size] = old[: self.size]
                setattr(self, name, new)
        k = self.size
        self.rows[k], self.unit[k], self.info[k], self.cls[k] = row, unit, info, cls
        self.size += 1


class Monitor:
    """Tracks how much of the training set's information a query stream has
    collected.

    Each answered query becomes a row ``u = q || z``. Its information is the
    correlation of ``u`` with every training tuple, weighted by the
    per-tuple information, minus the same quantity against the rows already
    logged (weighted by their recorded information). Correlations keep their
    sign, so a row unlike anything logged can earn back what an earlier
    row overclaimed (``signed=False`` floors negative correlations at 0
    instead). A row identical to a logged one carries nothing new.

    The dataset information is the joint entropy of the discretised
    training tuples, in bits, split across tuples by surprisal.
    """

    def __init__(self, train: Dataset, *, info: InfoVector | None = None, signed: bool = True):
        rows = train.rows
        if rows.shape[0] == 0:
            raise MonitorError("monitor needs a nonempty training set")
        self.n = train.n
        self.signed = signed
        self._data_unit = _unit_rows(rows)
        if info is None:
            disc = np.column_stack([train.discretize(), train.y])
            info = per_tuple_info(disc, scale=1.0)
        if info.per_tuple.shape != (rows.shape[0],):
            raise MonitorError("information vector must align with training tuples")
        self.data_info = info
        self.tuple_class = np.asarray(train.y, dtype=int)
        self.class_probs = train.class_probs
        self.class_info = np.array([info.per_tuple[self.tuple_class == k].sum() for k in (0, 1)])
        self.leakage = 0.0
        self._log = _Log(rows.shape[1])
        self._seen: set[bytes] = set()

    @property
    def total_info(self) -> float:
        return self.data_info.total

    def __len__(self) -> int:
        return self._log.size

    @property
    def log_rows(self) -> np.ndarray:
        return self._log.rows[: self._log.size].copy()

    @property
    def log_info(self) -> np.ndarray:
        return self._log.info[: self._log.size].copy()

    def _unit(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n + 1,):
            raise MonitorError(f"expected a row of length {self.n + 1}, got {u.shape}")
        return _unit_rows(u[None, :])[0]

    def correlations(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Row-wise PCC of ``u`` against training tuples and logged rows."""
        unit = self._unit(u)
        k = self._log.size
        return self._data_unit @ unit, self._log.unit[:k] @ unit

    def query_info(self, u) -> float:
        """Information carried by ``u`` net of what the log already holds.

        May be negative for a redundant row; callers accumulate ``max(I_u, 0)``.
        """
        c_data, c_log = self.correlations(u)
        if not self.signed:
            c_data, c_log = np.maximum(c_data, 0.0), np.maximum(c_log, 0.0)
        k = self._log.size
        info = float(c_data @ self.data_info.per_tuple)
        if k:
            info -= float(c_log @ self._log.info[:k])
        if _key(u) in self._seen:
            info = min(info, 0.0)
        return info

    def _append(self, u, contribution: float) -> None:
        self._log.append(u, self._unit(u), contribution, int(to_label(u[-1])))
        self._seen.add(_key(u))

    def observe(self, q, z: float) -> float:
        """Log an answered query; returns its (unfloored) information."""
        u = np.append(np.asarray(q, dtype=float), float(z))
        info = self.query_info(u)
        contribution = max(info, 0.0)
        self._append(u, contribution)
        self.leakage += contribution
        return info

    def extraction_status(self) -> ExtractionStatus:
        """Class-weighted share of the training information leaked so far.

        Each class ratio is capped at 1 (a class cannot leak more than it
        holds); the weighted sum is then clipped to [0, 1].
        """
        k = self._log.size
        per_class: dict[int, float] = {}
        empty = []
        raw = 0.0
        for c in (0, 1):
            leaked = float(self._log.info[:k][self._log.cls[:k] == c].sum())
            if self.class_info[c] <= 0:
                per_class[c] = 0.0
                empty.append(c)
                continue
            per_class[c] = min(leaked / self.class_info[c], 1.0)
            raw += self.class_probs[c] * per_class[c]
        overall = min(max(raw, 0.0), 1.0)
        return ExtractionStatus(per_class, raw, overall, overall != raw, tuple(empty))

    def replay(self, rows) -> "Monitor":
        """Fresh monitor over the same training data fed with ``rows``."""
        clone = object.__new__(Monitor)
        clone.__dict__.update(self.__dict__)
        clone.leakage = 0.0
        clone._log = _Log(self.n + 1)
        clone._seen = set()
        for u in np.atleast_2d(rows):
            clone.observe(u[:-1], u[-1])
        return clone

    def canonical_status(self) -> ExtractionStatus:
        """Status of the logged rows replayed in lexicographic order, which
        does not depend on the order the queries arrived in."""
        rows = self.log_rows
        if len(rows) == 0:
            return self.extraction_status()
        order = np.lexsort(rows.T[::-1])
        return self.replay(rows[order]).extraction_status()

    # checkpointing

    def state_dict(self) -> dict:
        return {
            "n": self.n,
            "rows": self.log_rows.tolist(),
            "info": self.log_info.tolist(),
            "leakage": self.leakage,
        }

    def load_state(self, state: dict) -> "Monitor":
        if state["n"] != self.n:
            raise MonitorError("checkpoint dimension does not match training data")
        self._log = _Log(self.n + 1)
        self._seen = set()
        for row, info in zip(state["rows"], state["info"]):
            self._append(np.asarray(row, dtype=float), float(info))
        self.leakage = float(state["leakage"])
        return self

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()))

    def load(self, path: str | Path) -> "Monitor":
        return self.load_state(json.loads(Path(path).read_text()))


def warning_baseline(log_rows, target, validation: Dataset | np.ndarray, *, max_depth: int = 6) -> float:
    """Agreement between a surrogate tree, fit on the logged ``(q, label(z))``
    pairs, and the deployed model on validation inputs."""
    from sklearn.tree import DecisionTreeClassifier

    rows = np.atleast_2d(np.asarray(log_rows, dtype=float))
    if rows.shape[0] < 5:
        raise MonitorError(f"warning baseline needs at least 5 logged queries, got {rows.shape[0]}")
    X_val = validation.X if isinstance(validation, Dataset) else np.atleast_2d(validation)
    truth = to_label(target.predict_prob(X_val))
    Xq, yq = rows[:, :-1], to_label(rows[:, -1])
    if yq.min() == yq.max():
        logger.warning("warning baseline: single-class log, surrogate is constant")
        return float(np.mean(truth == yq[0]))
    tree = DecisionTreeClassifier(max_depth=max_depth, random_state=0).fit(Xq, yq)
    return float(np.mean(tree.predict(X_val) == truth))
