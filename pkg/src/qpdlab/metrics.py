"""Model utility and extraction fidelity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import to_label


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    r_test: float
    n_eval: int
    r_unif: float | None = None

    @property
    def one_minus_r_test(self) -> float:
        return 1.0 - self.r_test


def _inputs(d) -> np.ndarray:
    X = d.X if isinstance(d, Dataset) else np.atleast_2d(np.asarray(d, dtype=float))
    if X.shape[0] == 0:
        raise MetricError("empty evaluation set")
    return X


def accuracy(model, d: Dataset) -> float:
    """Fraction of tuples whose thresholded prediction equals the label."""
    X = _inputs(d)
    return float(np.mean(to_label(model.predict_prob(X)) == d.y))


def r_test(original, extracted, d_test) -> float:
    """Label-disagreement rate between two models on the test inputs."""
    if original.n != extracted.n:
        raise MetricError(f"dimension mismatch: {original.n} vs {extracted.n}")
    X = _inputs(d_test)
    return float(np.mean(to_label(original.predict_prob(X)) != to_label(extracted.predict_prob(X))))


def r_unif(original, extracted, n_samples: int = 10_000, seed: int | None = 0, box=(-1.0, 1.0)) -> float:
    """Disagreement rate on points drawn uniformly from the feature box."""
    if n_samples < 100:
        raise MetricError("n_samples must be >= 100")
    if original.n != extracted.n:
        raise MetricError(f"dimension mismatch: {original.n} vs {extracted.n}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(box[0], box[1], size=(n_samples, original.n))
    return r_test(original, extracted, X)


def evaluate(original, extracted, d_test: Dataset, *, unif_samples: int | None = None, seed: int = 0) -> EvalResult:
    ru = None if unif_samples is None else r_unif(original, extracted, unif_samples, seed)
    return EvalResult(accuracy(original, d_test), r_test(original, extracted, d_test), d_test.m, ru)
