"""Tabular dataset ingestion, preprocessing, splitting and discretization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

N_BINS = 10


class DataError(ValueError):
    """Base class for ingestion and preprocessing failures."""


class CSVParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    pass


class PreprocessingError(DataError):
    pass


class UnsupportedTaskError(DataError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical"

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label: str

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @classmethod
    def from_dict(cls, spec: dict) -> "Schema":
        try:
            cols = tuple(Column(c["name"], c["kind"]) for c in spec["columns"])
            label = spec["label"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if label not in names:
            # the label may be declared outside the feature list
            cols = cols + (Column(label, "categorical"),)
        return cls(cols, label)

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RawDataset:
    """Parsed CSV rows. Missing cells are ``None``; nothing is dropped."""

    rows: tuple[tuple[Any, ...], ...]
    schema: Schema

    def __post_init__(self):
        width = len(self.schema.columns)
        for k, row in enumerate(self.rows):
            if len(row) != width:
                raise SchemaError(f"row {k} has {len(row)} cells, expected {width}")

    @property
    def label_column(self) -> str:
        return self.schema.label

    @property
    def n_missing(self) -> int:
        return sum(cell is None for row in self.rows for cell in row)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Clean numeric features with binary labels.

    ``feature_bins[j]`` holds the bin edges for numeric feature ``j`` or
    ``None`` when the column is one-hot (already binary). ``ground_truth``
    is set only for synthetic data.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    feature_bins: tuple[np.ndarray | None, ...]
    onehot_groups: tuple[tuple[int, ...], ...] = ()
    class_names: tuple[str, str] = ("0", "1")
    ground_truth: tuple[np.ndarray, float] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
        if np.isnan(X).any():
            raise DataError("missing values in X")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if len(self.feature_bins) != X.shape[1]:
            raise DataError("one bin setting per feature required")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def class_probs(self) -> np.ndarray:
        if self.m == 0:
            return np.array([0.5, 0.5])
        p1 = float(self.y.mean())
        return np.array([1.0 - p1, p1])

    @property
    def rows(self) -> np.ndarray:
        """Training tuples as ``x || y`` rows."""
        return np.column_stack([self.X, self.y.astype(float)])

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.X[idx], self.y[idx], self.feature_names, self.feature_bins,
            self.onehot_groups, self.class_names, self.ground_truth,
        )

    def discretize(self, X: np.ndarray | None = None) -> np.ndarray:
        """Bin features: numeric columns into equal-width bins (clamped at the
        edges), one-hot columns kept as 0/1."""
        X = self.X if X is None else np.atleast_2d(np.asarray(X, dtype=float))
        return discretize(X, self.feature_bins)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset
    seed: int


def equal_width_edges(values: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n_bins + 1)


def discretize(X: np.ndarray, bins: Sequence[np.ndarray | None]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.int64)
    for j, edges in enumerate(bins):
        col = X[:, j]
        if edges is None:
            out[:, j] = (col >= 0.5).astype(np.int64)
        else:
            # interior edges only, so values outside the range clamp to edge bins
            out[:, j] = np.digitize(col, edges[1:-1])
    return out


def load_csv(path: str | Path, schema: Schema) -> RawDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    kinds = {c.name: c.kind for c in schema.columns}
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=",")
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError("empty file, header expected", 1) from None
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in kinds]
        if unknown:
            raise SchemaError(f"unknown column(s) in header: {unknown}")
        missing = [c for c in schema.names if c not in header]
        if missing:
            raise SchemaError(f"columns absent from header: {missing}")
        order = [header.index(name) for name in schema.names]
        rows = []
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != len(header):
                raise CSVParseError(f"expected {len(header)} cells, got {len(record)}", line)
            row = []
            for name, pos in zip(schema.names, order):
                cell = record[pos].strip()
                if cell == "":
                    row.append(None)
                elif kinds[name] == "numeric":
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise CSVParseError(f"non-numeric value {cell!r} in {name!r}", line) from None
                else:
                    row.append(cell)
            rows.append(tuple(row))
    return RawDataset(tuple(rows), schema)


def _mode(values: list) -> Any:
    counts: dict[Any, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    # ties broken by sort order for determinism
    return min(counts, key=lambda v: (-counts[v], str(v)))


def preprocess(raw: RawDataset) -> Dataset:
    """One-hot encode categoricals, impute missing cells, encode labels."""
    schema = raw.schema
    label_pos = schema.names.index(schema.label)
    labels = [row[label_pos] for row in raw.rows]
    if any(v is None for v in labels):
        raise UnsupportedTaskError("missing label values")
    classes = sorted({str(v) for v in labels})
    if len(classes) > 2:
        raise UnsupportedTaskError(f"binary labels required, found {len(classes)} classes")
    if len(classes) == 1:
        classes = classes + [classes[0] + "'"]
    if len(classes) == 0:
        classes = ["0", "1"]
    y = np.array([classes.index(str(v)) for v in labels], dtype=int)

    columns, names, bins, groups = [], [], [], []
    for pos, col in enumerate(schema.columns):
        if pos == label_pos:
            continue
        cells = [row[pos] for row in raw.rows]
        present = [c for c in cells if c is not None]
        if raw.rows and not present:
            raise PreprocessingError(f"column {col.name!r} has no observed values")
        if col.kind == "numeric":
            fill = float(np.mean(present)) if present else 0.0
            values = np.array([fill if c is None else float(c) for c in cells], dtype=float)
            columns.append(values)
            names.append(col.name)
            bins.append(equal_width_edges(values) if len(values) else np.linspace(0, 1, N_BINS + 1))
        else:
            fill = _mode(present) if present else None
            filled = [fill if c is None else c for c in cells]
            levels = sorted({str(v) for v in filled})
            start = len(columns)
            for level in levels:
                columns.append(np.array([1.0 if str(v) == level else 0.0 for v in filled]))
                names.append(f"{col.name}={level}")
                bins.append(None)
            groups.append(tuple(range(start, start + len(levels))))
    m = len(raw.rows)
    X = np.column_stack(columns) if columns else np.zeros((m, 0))
    return Dataset(X, y, tuple(names), tuple(bins), tuple(groups), (classes[0], classes[1]))


def split(d: Dataset, seed: int) -> SplitDataset:
    """Deterministic 70/30 train/test partition."""
    if d.m < 10:
        raise DataError(f"too few rows to split: {d.m} < 10")
    perm = np.random.default_rng(seed).permutation(d.m)
    n_train = (7 * d.m) // 10  # floor(0.7 m) without float rounding
    return SplitDataset(d.subset(perm[:n_train]), d.subset(perm[n_train:]), seed)


def synthesize(
    n_dims: int,
    m: int,
    coeffs: Sequence[float] | None = None,
    intercept: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Features uniform in [-1, 1]; labels drawn from a logistic model.

    ``coeffs`` defaults to standard-normal draws from the same seed.
    """
    if n_dims < 1:
        raise DataError("n_dims must be >= 1")
    if m < n_dims + 2:
        raise DataError(f"m={m} too small for n_dims={n_dims} (need >= {n_dims + 2})")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n_dims) if coeffs is None else np.asarray(coeffs, dtype=float)
    if a.shape != (n_dims,):
        raise DataError(f"expected {n_dims} coefficients, got {a.shape}")
    X = rng.uniform(-1.0, 1.0, size=(m, n_dims))
    p = 1.0 / (1.0 + np.exp(-(X @ a + intercept)))
    y = (rng.random(m) < p).astype(int)
    edges = tuple(np.linspace(-1.0, 1.0, N_BINS + 1) for _ in range(n_dims))
    names = tuple(f"x{j}" for j in range(n_dims))
    return Dataset(X, y, names, edges, ground_truth=(a.copy(), float(intercept)))
