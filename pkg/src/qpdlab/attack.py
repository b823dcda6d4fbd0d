"""Query-flooding parameter duplication: duplicate n+1 independent queries,
average the perturbed answers and solve for the coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
from scipy import stats

from .models import NeuralModel, TrainConfig, constant_model, sigmoid, train_nn

DET_ACCEPT = 1e-9
DET_SINGULAR = 1e-12
R_CAP = 2**20
LOGIT_CLAMP = 1e-6
Z_975 = 1.959963984540054
LAPLACE_Q975 = math.log(20.0)  # standard Laplace 0.975 quantile, -ln(0.05)


class AttackError(RuntimeError):
    pass


class SingularSystemError(AttackError):
    pass


class BudgetExhaustedError(AttackError):
    """Duplication count would exceed the cap; ``partial`` holds what was collected."""

    def __init__(self, message: str, partial: "DuplicatedResponses"):
        super().__init__(message)
        self.partial = partial


class Endpoint(Protocol):
    def submit(self, x: np.ndarray) -> float: ...


@dataclass(frozen=True, eq=False)
class QueryMatrix:
    Q: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1] + 1:
            raise AttackError(f"need n+1 queries of dimension n, got shape {Q.shape}")
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return self.Q.shape[1]

    @property
    def augmented(self) -> np.ndarray:
        """Queries with the constant-one column appended, (n+1) x (n+1)."""
        return np.column_stack([self.Q, np.ones(self.n + 1)])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.augmented))


@dataclass
class DuplicatedResponses:
    """``samples[j]`` are the answers collected for query ``j``."""

    samples: list[list[float]]
    queries_sent: int = 0
    family: str = "gaussian"
    ci_lengths: list[float] = field(default_factory=list)

    @property
    def r(self) -> int:
        counts = {len(s) for s in self.samples}
        if len(counts) != 1:
            raise AttackError(f"unequal duplication counts {sorted(counts)}")
        return counts.pop()


@dataclass(frozen=True)
class CIResult:
    distribution: str
    lower: float
    upper: float

    @property
    def length(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class NoiseTest:
    family: str
    scale: float
    ks_laplace: float
    ks_gaussian: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class ExtractedModel:
    a: np.ndarray
    b: float
    kind: str = "linear-solve"
    queries_used: int = 0
    r: int = 0
    solve_discrepancy: float = 0.0

    @property
    def n(self) -> int:
        return len(self.a)

    def logit(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        t = X @ self.a + self.b
        return float(t[0]) if np.ndim(x) == 1 else t

    def predict_prob(self, x):
        return sigmoid(self.logit(x))


def _box(box, n: int) -> tuple[np.ndarray, np.ndarray]:
    low, high = box
    return np.broadcast_to(np.asarray(low, float), (n,)), np.broadcast_to(np.asarray(high, float), (n,))


def build_query_matrix(n: int, seed: int | None = None, *, rng: np.random.Generator | None = None,
                       box=(-1.0, 1.0), max_tries: int = 100) -> QueryMatrix:
    """Random n+1 queries whose augmented matrix is comfortably nonsingular."""
    if n < 1:
        raise AttackError("n must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    low, high = _box(box, n)
    for _ in range(max_tries):
        qm = QueryMatrix(low + (high - low) * rng.random((n + 1, n)))
        if abs(qm.det) > DET_ACCEPT:
            return qm
    raise AttackError(f"no nonsingular query matrix after {max_tries} draws")


def hypothesis_test_noise(samples: Sequence[float]) -> NoiseTest:
    """Pick Laplace or Gaussian by the smaller Kolmogorov-Smirnov distance.

    Samples are centred by their median; each family's scale is its MLE
    about that centre.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 8:
        raise AttackError(f"need at least 8 samples, got {x.size}")
    d = x - np.median(x)
    b = float(np.mean(np.abs(d)))
    sigma = float(np.sqrt(np.mean(d**2)))
    if b == 0.0 or sigma == 0.0:
        return NoiseTest("gaussian", 0.0, math.inf, math.inf, degenerate=True)
    ks_l = stats.kstest(d, "laplace", args=(0.0, b)).statistic
    ks_g = stats.kstest(d, "norm", args=(0.0, sigma)).statistic
    if ks_l < ks_g:
        return NoiseTest("laplace", b, ks_l, ks_g)
    return NoiseTest("gaussian", sigma, ks_l, ks_g)


@lru_cache(maxsize=None)
def laplace_pivot_quantiles(n: int, reps: int = 20000, seed: int = 12345) -> tuple[float, float]:
    """0.025 and 0.975 quantiles of (median - mu) / mean|X - median| for
    ``n`` Laplace draws. The statistic is location/scale free, so it is
    simulated once per ``n``; large ``n`` uses its normal limit N(0, 1/n)."""
    if n > 512:
        h = Z_975 / math.sqrt(n)
        return -h, h
    x = np.random.default_rng(seed).laplace(size=(reps, n))
    med = np.median(x, axis=1)
    mad = np.mean(np.abs(x - med[:, None]), axis=1)
    ok = mad > 0
    t = med[ok] / mad[ok]
    lo, hi = np.quantile(t, [0.025, 0.975])
    # symmetric distribution; average the tails to halve simulation error
    h = 0.5 * (hi - lo)
    return -float(h), float(h)


def ci_laplace(samples: Sequence[float], quantiles: str = "pivot") -> CIResult:
    """95% interval ``[med - X_hi * mad, med - X_lo * mad]`` for a Laplace mean.

    ``quantiles="pivot"`` uses the sampling quantiles of the studentised
    median (calibrated coverage); ``"distribution"`` plugs in the standard
    Laplace quantiles +-ln(20).
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise AttackError("need at least 2 samples")
    med = float(np.median(x))
    mad = float(np.mean(np.abs(x - med)))
    if quantiles == "pivot":
        q_lo, q_hi = laplace_pivot_quantiles(int(x.size))
    elif quantiles == "distribution":
        q_lo, q_hi = -LAPLACE_Q975, LAPLACE_Q975
    else:
        raise AttackError(f"unknown quantile source {quantiles!r}")
    return CIResult("laplace", med - q_hi * mad, med - q_lo * mad)


def ci_gaussian(samples: Sequence[float]) -> CIResult:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise AttackError("need at least 2 samples")
    mean = float(x.mean())
    half = Z_975 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return CIResult("gaussian", mean - half, mean + half)


def _pooled_family(samples: list[list[float]]) -> str:
    # every query sees the same noise law, so residuals about each query's
    # median are pooled for the family test
    resid = np.concatenate([np.asarray(s) - np.median(s) for s in samples])
    if resid.size < 8:
        return "gaussian"
    return hypothesis_test_noise(resid).family


def ci_lengths(samples: list[list[float]], family: str, quantiles: str = "pivot") -> list[float]:
    if family == "laplace":
        return [ci_laplace(s, quantiles).length for s in samples]
    return [ci_gaussian(s).length for s in samples]


def _query_rounds(api: Endpoint, Q: np.ndarray, samples: list[list[float]], copies: int) -> int:
    # duplicate the whole matrix ``copies`` times, in Q_d order
    if copies > 0 and hasattr(api, "submit_many"):
        block = np.asarray(api.submit_many(np.tile(Q, (copies, 1))), dtype=float).reshape(copies, len(Q))
        for j in range(len(Q)):
            samples[j].extend(block[:, j].tolist())
        return copies * len(Q)
    for _ in range(copies):
        for j, q in enumerate(Q):
            samples[j].append(float(api.submit(q)))
    return copies * len(Q)


def collect_responses(api: Endpoint, Q: QueryMatrix | np.ndarray, r: int) -> DuplicatedResponses:
    """Send every query exactly ``r`` times."""
    Q = Q.Q if isinstance(Q, QueryMatrix) else np.atleast_2d(Q)
    if r < 1:
        raise AttackError("r must be >= 1")
    samples: list[list[float]] = [[] for _ in range(len(Q))]
    sent = _query_rounds(api, Q, samples, r)
    return DuplicatedResponses(samples, sent)


def find_optimal_r(api: Endpoint, Q: QueryMatrix | np.ndarray, ci_threshold: float = 0.05, *,
                   r_start: int = 2, r_cap: int = R_CAP, strict: bool = False,
                   quantiles: str = "pivot", trace: list | None = None) -> tuple[int, DuplicatedResponses]:
    """Exponential search on the duplication count.

    Doubles ``r`` until every query's 95% CI is no longer than
    ``ci_threshold``. Answers from earlier rounds are kept and only the
    missing copies are requested; ``strict=True`` instead re-sends the whole
    duplicated matrix each round and discards the previous answers.
    Each round appends ``(r, max CI length)`` to ``trace`` when given.
    """
    if not ci_threshold > 0:
        raise AttackError("ci_threshold must be positive")
    Q = Q.Q if isinstance(Q, QueryMatrix) else np.atleast_2d(Q)
    samples: list[list[float]] = [[] for _ in range(len(Q))]
    sent = 0
    r = r_start
    while True:
        if r > r_cap:
            partial = DuplicatedResponses(samples, sent)
            raise BudgetExhaustedError(f"r would exceed cap {r_cap}", partial)
        if strict:
            samples = [[] for _ in range(len(Q))]
            sent += _query_rounds(api, Q, samples, r)
        else:
            sent += _query_rounds(api, Q, samples, r - len(samples[0]))
        family = _pooled_family(samples)
        lengths = ci_lengths(samples, family, quantiles)
        if trace is not None:
            trace.append((r, max(lengths)))
        if max(lengths) <= ci_threshold:
            return r, DuplicatedResponses(samples, sent, family, lengths)
        r *= 2


def denoise(responses: DuplicatedResponses | Sequence[Sequence[float]]) -> np.ndarray:
    """Per-query sample mean of the duplicated answers."""
    samples = responses.samples if isinstance(responses, DuplicatedResponses) else responses
    if not samples or any(len(s) == 0 for s in samples):
        raise AttackError("no responses to average")
    return np.array([float(np.mean(s)) for s in samples])


def solve_cramer(Q: QueryMatrix | np.ndarray, z: Sequence[float]) -> ExtractedModel:
    """``a_k = det(Q^k) / det(Q)`` where ``Q^k`` has column ``k`` replaced by ``z``;
    the last column (the ones) yields the intercept."""
    qm = Q if isinstance(Q, QueryMatrix) else QueryMatrix(Q)
    A = qm.augmented
    z = np.asarray(z, dtype=float)
    if z.shape != (qm.n + 1,):
        raise AttackError(f"expected {qm.n + 1} results, got {z.shape}")
    det = np.linalg.det(A)
    if abs(det) < DET_SINGULAR:
        raise SingularSystemError(f"|det| = {abs(det):.3e} below {DET_SINGULAR}")
    coef = np.empty(qm.n + 1)
    for k in range(qm.n + 1):
        Ak = A.copy()
        Ak[:, k] = z
        coef[k] = np.linalg.det(Ak) / det
    direct = np.linalg.solve(A, z)
    gap = float(np.max(np.abs(coef - direct)))
    return ExtractedModel(coef[:-1], float(coef[-1]), solve_discrepancy=gap)


def inverse_logit(z: np.ndarray, flip_keep: float | None = None) -> np.ndarray:
    """Averaged probabilities to logits, optionally undoing a known label flip rate."""
    z = np.asarray(z, dtype=float)
    if flip_keep is not None:
        if not 0.5 < flip_keep <= 1.0:
            raise AttackError("flip_keep must lie in (0.5, 1]")
        z = (z - (1.0 - flip_keep)) / (2.0 * flip_keep - 1.0)
    z = np.clip(z, LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
    return np.log(z / (1.0 - z))


def attack_logistic(api: Endpoint, n: int, ci_threshold: float = 0.05, *, seed: int | None = 0,
                    r: int | None = None, r_cap: int = R_CAP, strict: bool = False,
                    flip_keep: float | None = None, box=(-1.0, 1.0),
                    query_matrix: QueryMatrix | None = None, trace: list | None = None) -> ExtractedModel:
    """Full pipeline against a logistic-regression endpoint.

    With ``r`` given the duplication count is fixed instead of searched.
    """
    qm = query_matrix or build_query_matrix(n, seed, box=box)
    if r is None:
        r, responses = find_optimal_r(api, qm, ci_threshold, r_cap=r_cap, strict=strict, trace=trace)
    else:
        responses = collect_responses(api, qm, r)
    t = inverse_logit(denoise(responses), flip_keep)
    fit = solve_cramer(qm, t)
    return ExtractedModel(fit.a, fit.b, "linear-solve", responses.queries_sent, r, fit.solve_discrepancy)


@dataclass(frozen=True, eq=False)
class ShadowResult:
    model: NeuralModel
    queries: np.ndarray
    targets: np.ndarray
    r: int
    queries_used: int


def attack_shadow(api: Endpoint, n: int, ci_threshold: float = 0.05,
                  cfg: TrainConfig = TrainConfig(), *, s: int | None = None, seed: int | None = 0,
                  r: int | None = None, r_cap: int = R_CAP, box=(-1.0, 1.0)) -> ShadowResult:
    """Fit a substitute network on denoised answers to ``s`` random queries
    (default ``20 (n + 1)``)."""
    s = 20 * (n + 1) if s is None else s
    if s < 1:
        raise AttackError("s must be >= 1")
    rng = np.random.default_rng(seed)
    low, high = _box(box, n)
    X = low + (high - low) * rng.random((s, n))
    samples: list[list[float]] = [[] for _ in range(s)]
    if r is None:
        sent, r_now = 0, 2
        while True:
            if r_now > r_cap:
                raise BudgetExhaustedError(f"r would exceed cap {r_cap}", DuplicatedResponses(samples, sent))
            sent += _query_rounds(api, X, samples, r_now - len(samples[0]))
            family = _pooled_family(samples)
            if max(ci_lengths(samples, family)) <= ci_threshold:
                break
            r_now *= 2
        r = r_now
    else:
        sent = _query_rounds(api, X, samples, r)
    targets = np.clip(denoise(samples), 0.0, 1.0)
    if np.ptp(targets) < 1e-12:
        model = constant_model(n, float(targets[0]))
    else:
        model = train_nn((X, targets), cfg, soft=True)
    return ShadowResult(model, X, targets, r, sent)
