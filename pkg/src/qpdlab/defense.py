"""Adaptive privacy budget allocation and the monitored DP endpoint."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .data import Dataset
from .mechanisms import NoiseSpec, PerturbedResponse, in_boundary_zone, perturb
from .monitor import Monitor

MIN_EPSILON = 1e-12


class DefenseError(ValueError):
    pass


def scale_parameter(epsilon: float, threshold: float) -> float:
    """``p`` such that the allocation curve integrates to ``epsilon`` over [0, L_t]."""
    return 9.0 * epsilon**2 / (4.0 * threshold**3)


def allocation_curve(leakage, epsilon: float, threshold: float):
    """``sqrt(p (L_t - L))`` with ``p`` from ``epsilon``; zero past the threshold."""
    p = scale_parameter(epsilon, threshold)
    return np.sqrt(p * np.maximum(threshold - np.asarray(leakage, dtype=float), 0.0))


@dataclass
class PrivacyAccountant:
    """Budget state for one protected model.

    The spent total is kept as an exact rational so that the allocations
    never sum past ``epsilon``.
    """

    epsilon: float
    threshold: float
    fixed_p: bool = False
    min_epsilon: float = MIN_EPSILON
    leakage: float = 0.0
    history: list[tuple[int, float, float, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DefenseError("epsilon must be positive")
        if not self.threshold > 0:
            raise DefenseError("leakage threshold must be positive")
        self._spent = Fraction(0)
        self._p0 = scale_parameter(self.epsilon, self.threshold)

    @property
    def spent(self) -> float:
        return float(self._spent)

    @property
    def epsilon_remaining(self) -> float:
        exact = Fraction(self.epsilon) - self._spent
        rem = float(exact)
        if Fraction(rem) > exact:  # round down so a full draw never overspends
            rem = math.nextafter(rem, 0.0)
        return max(rem, 0.0)

    @property
    def scale(self) -> float:
        if self.fixed_p:
            return self._p0
        return scale_parameter(self.epsilon_remaining, self.threshold)

    @property
    def exhausted(self) -> bool:
        return self.leakage >= self.threshold or self.epsilon_remaining <= self.min_epsilon

    def commit(self, epsilon_i: float, status: str = "answered") -> None:
        if epsilon_i < 0:
            raise DefenseError("negative allocation")
        if Fraction(epsilon_i) > Fraction(self.epsilon) - self._spent:
            raise DefenseError("allocation exceeds the remaining budget")
        self._spent += Fraction(epsilon_i)
        self.history.append((len(self.history) + 1, float(epsilon_i), self.leakage, status))

    def export_history(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "epsilon_i", "L_i", "status"])
            w.writerows(self.history)


def apba_allocate(acct: PrivacyAccountant) -> float:
    """Allocation for the next query: ``sqrt(-p (L_i - L_t))`` with
    ``p = 9 eps_re^2 / (4 L_t^3)``, capped at the remaining budget.

    Returns 0 once the leakage reaches the threshold. Does not commit.
    """
    if acct.leakage >= acct.threshold:
        return 0.0
    remaining = acct.epsilon_remaining
    if remaining <= 0:
        return 0.0
    eps_i = math.sqrt(acct.scale * (acct.threshold - acct.leakage))
    return min(eps_i, remaining)


class PlainEndpoint:
    """Target model behind a fixed (non-adaptive) mechanism."""

    def __init__(self, model, spec: NoiseSpec = NoiseSpec(), *, response: str = "prob",
                 clamp: bool = False, seed: int | None = 0):
        self.model = model
        self.spec = spec
        self.response = response
        self.clamp = clamp
        self.rng = np.random.default_rng(seed)
        self.queries = 0
        self.epsilon_spent = 0.0

    @property
    def n(self) -> int:
        return self.model.n

    def respond(self, q) -> PerturbedResponse:
        self.queries += 1
        out = perturb(self.model.predict_prob(q), self.spec, self.rng, response=self.response, clamp=self.clamp)
        self.epsilon_spent += out.epsilon_spent
        return out

    def submit(self, q) -> float:
        return self.respond(q).value

    def submit_many(self, Q) -> np.ndarray:
        """Answers for the rows of ``Q`` in order; the same values as
        submitting them one by one from the same random state."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if self.spec.kind not in ("laplace", "gaussian"):
            return np.array([self.submit(q) for q in Q])
        probs = np.asarray(self.model.predict_prob(Q), dtype=float)
        scale = self.spec.sensitivity / self.spec.epsilon
        draw = self.rng.laplace if self.spec.kind == "laplace" else self.rng.normal
        values = probs + draw(0.0, scale, size=len(probs))
        if self.clamp:
            values = np.clip(values, 0.0, 1.0)
        if self.response == "label":
            values = (values >= 0.5).astype(float)
        self.queries += len(probs)
        self.epsilon_spent += self.spec.epsilon * len(probs)
        return values


class DefendedEndpoint:
    """Monitoring-based DP: each answer is perturbed with a budget share
    allocated from the leakage the monitor has measured so far.

    Once the budget is used up or the leakage reaches the threshold the
    endpoint refuses for good, answering 0.5 (or a fair coin in ``label``
    mode).
    """

    def __init__(self, model, train: Dataset, mechanism: str = "laplace", epsilon: float = 1.0,
                 alpha: float = 1.0, delta_zone: float = 0.125, *, threshold: float | None = None,
                 response: str = "prob", fixed_p: bool = False, clamp: bool = False,
                 seed: int | None = 0, monitor: Monitor | None = None):
        if mechanism not in ("laplace", "gaussian", "bdpl"):
            raise DefenseError(f"unsupported mechanism {mechanism!r}")
        if threshold is None and not 0 < alpha <= 1:
            raise DefenseError("alpha must lie in (0, 1]")
        self.model = model
        self.monitor = monitor if monitor is not None else Monitor(train)
        if threshold is None:
            threshold = alpha * self.monitor.total_info
        self.accountant = PrivacyAccountant(epsilon, threshold, fixed_p=fixed_p)
        self.accountant.leakage = self.monitor.leakage
        self.spec = NoiseSpec(mechanism, epsilon, delta_zone=delta_zone)
        self.response = response
        self.clamp = clamp
        self.rng = np.random.default_rng(seed)
        self.queries = 0
        self.refused = False

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def mechanism(self) -> str:
        return self.spec.kind

    def _refusal(self) -> PerturbedResponse:
        value = 0.5 if self.response == "prob" else float(self.rng.random() < 0.5)
        return PerturbedResponse(value, self.spec.with_epsilon(self.spec.epsilon), 0.0, refused=True)

    def respond(self, q) -> PerturbedResponse:
        self.queries += 1
        acct = self.accountant
        if self.refused or acct.exhausted:
            self.refused = True
            return self._refusal()
        prob = self.model.predict_prob(q)
        eps_i = apba_allocate(acct)
        if eps_i <= 0:
            self.refused = True
            return self._refusal()
        charged = not (self.spec.kind == "bdpl" and not in_boundary_zone(prob, self.spec.delta_zone))
        out = perturb(prob, self.spec.with_epsilon(eps_i), self.rng, response=self.response, clamp=self.clamp)
        spent = eps_i if charged else 0.0
        acct.commit(spent, "answered" if charged else "outside-zone")
        self.monitor.observe(q, out.value)
        acct.leakage = self.monitor.leakage
        return PerturbedResponse(out.value, out.mechanism, spent)

    def submit(self, q) -> float:
        return self.respond(q).value


def mdp_respond(ep: DefendedEndpoint, q) -> PerturbedResponse:
    return ep.respond(q)


def wrap_bdpl_with_mdp(target, dataset: Dataset, epsilon: float, threshold: float,
                       delta_zone: float = 0.125, **kwargs) -> DefendedEndpoint:
    """BDPL whose per-query budget comes from the adaptive allocator."""
    if not 0 < delta_zone <= 0.5:
        raise DefenseError("delta_zone must lie in (0, 0.5]")
    return DefendedEndpoint(target, dataset, "bdpl", epsilon, delta_zone=delta_zone,
                            threshold=threshold, **kwargs)
