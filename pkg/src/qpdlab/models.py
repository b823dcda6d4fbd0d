"""Target models: n-dimensional logistic regression and a one-hidden-layer
sigmoid network, trained by full-batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import Dataset


class ModelError(ValueError):
    pass


class DegenerateTaskError(ModelError):
    pass


def sigmoid(t):
    # numerically stable in both tails
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def to_label(prob):
    """Probability to label; a tie at exactly 0.5 is class 1."""
    return (np.asarray(prob) >= 0.5).astype(int)


class Model(Protocol):
    n: int

    def predict_prob(self, X) -> np.ndarray | float: ...


def _check_input(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != n:
        raise ModelError(f"dimension mismatch: model has n={n}, input has {arr.shape[1]}")
    return arr, single


@dataclass(frozen=True, eq=False)
class LogisticModel:
    a: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def logit(self, x):
        X, single = _check_input(x, self.n)
        t = X @ self.a + self.b
        return float(t[0]) if single else t

    def predict_prob(self, x):
        return sigmoid(self.logit(x))

    def predict(self, x):
        return to_label(self.predict_prob(x))

    def to_dict(self) -> dict:
        return {"kind": "logistic", "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True, eq=False)
class NeuralModel:
    """``sigmoid(W2 . sigmoid(x W1 + b1) + b2)`` with ``W1`` of shape (n, h)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float

    def __post_init__(self):
        W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        h = W1.shape[1]
        if h < 1:
            raise ModelError("hidden layer needs at least one unit")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float).reshape(h))
        object.__setattr__(self, "W2", np.asarray(self.W2, dtype=float).reshape(h))
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def n(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.W1.shape[1]

    def predict_prob(self, x):
        X, single = _check_input(x, self.n)
        hidden = sigmoid(X @ self.W1 + self.b1)
        p = sigmoid(hidden @ self.W2 + self.b2)
        return float(p[0]) if single else p

    def predict(self, x):
        return to_label(self.predict_prob(x))

    def to_dict(self) -> dict:
        return {
            "kind": "nn",
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2,
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 2000
    hidden_units: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be positive")
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.hidden_units < 1:
            raise ModelError("hidden_units must be >= 1")


def predict_prob(model: Model, x):
    return model.predict_prob(x)


def logit(model: LogisticModel, x):
    return model.logit(x)


def cross_entropy(p: np.ndarray, t: np.ndarray) -> float:
    """Mean binary cross-entropy; ``t`` may be soft targets in [0, 1]."""
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))


def logistic_loss_grad(a: np.ndarray, b: float, X: np.ndarray, t: np.ndarray):
    """Mean cross-entropy of a logistic model and its gradient in (a, b)."""
    p = sigmoid(X @ a + b)
    r = (p - t) / X.shape[0]
    return cross_entropy(p, t), X.T @ r, float(r.sum())


def _targets(data: Dataset | tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return np.asarray(data.X, float), np.asarray(data.y, float)
    X, t = data
    return np.atleast_2d(np.asarray(X, float)), np.asarray(t, float)


def _check_trainable(X, t, soft: bool):
    if X.shape[0] == 0:
        raise DegenerateTaskError("empty training set")
    if not soft and (t.min() == t.max()):
        raise DegenerateTaskError("training set contains a single class")


def train_logistic(train, cfg: TrainConfig = TrainConfig(), *, soft: bool = False,
                   history: list | None = None) -> LogisticModel:
    """Fit by full-batch gradient descent on the mean cross-entropy.

    ``train`` is a Dataset or an ``(X, targets)`` pair; ``soft=True`` allows
    probability targets (and a single repeated target value).
    """
    X, t = _targets(train)
    _check_trainable(X, t, soft)
    a = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(cfg.epochs):
        loss, ga, gb = logistic_loss_grad(a, b, X, t)
        if history is not None:
            history.append(loss)
        a = a - cfg.learning_rate * ga
        b = b - cfg.learning_rate * gb
    if history is not None:
        history.append(logistic_loss_grad(a, b, X, t)[0])
    return LogisticModel(a, b)


def nn_loss_grad(params: dict, X: np.ndarray, t: np.ndarray):
    """Mean cross-entropy of the network and its backpropagated gradients."""
    W1, b1, W2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    H = sigmoid(X @ W1 + b1)
    p = sigmoid(H @ W2 + b2)
    m = X.shape[0]
    d_out = (p - t) / m
    gW2 = H.T @ d_out
    gb2 = float(d_out.sum())
    d_hidden = np.outer(d_out, W2) * H * (1 - H)
    gW1 = X.T @ d_hidden
    gb1 = d_hidden.sum(axis=0)
    return cross_entropy(p, t), {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def init_nn_params(n: int, h: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.uniform(-0.5, 0.5, size=(n, h)),
        "b1": rng.uniform(-0.5, 0.5, size=h),
        "W2": rng.uniform(-0.5, 0.5, size=h),
        "b2": float(rng.uniform(-0.5, 0.5)),
    }


def train_nn(train, cfg: TrainConfig = TrainConfig(), *, soft: bool = False,
             history: list | None = None) -> NeuralModel:
    X, t = _targets(train)
    _check_trainable(X, t, soft)
    params = init_nn_params(X.shape[1], cfg.hidden_units, cfg.seed)
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        loss, grads = nn_loss_grad(params, X, t)
        if history is not None:
            history.append(loss)
        for key in params:
            params[key] = params[key] - lr * grads[key]
    return NeuralModel(params["W1"], params["b1"], params["W2"], params["b2"])


def constant_model(n: int, prob: float) -> NeuralModel:
    """Network whose output is ``prob`` everywhere."""
    prob = min(max(prob, 1e-12), 1 - 1e-12)
    return NeuralModel(np.zeros((n, 1)), np.zeros(1), np.zeros(1), np.log(prob / (1 - prob)))


def model_from_dict(d: dict) -> LogisticModel | NeuralModel:
    kind = d.get("kind", "logistic" if "a" in d else "nn")
    if kind == "logistic":
        return LogisticModel(np.asarray(d["a"]), d["b"])
    if kind == "nn":
        return NeuralModel(np.asarray(d["W1"]), np.asarray(d["b1"]), np.asarray(d["W2"]), d["b2"])
    raise ModelError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
