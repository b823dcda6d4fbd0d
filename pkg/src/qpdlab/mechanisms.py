"""Response perturbation: Laplace, Gaussian, BDPL randomized response and
confidence rounding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

KINDS = ("laplace", "gaussian", "bdpl", "rounding", "none")


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    epsilon: float = 1.0
    sensitivity: float = 1.0
    delta_zone: float = 0.125
    decimals: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MechanismError(f"unknown mechanism {self.kind!r}")
        if self.kind in ("laplace", "gaussian", "bdpl") and not self.epsilon > 0:
            raise MechanismError(f"epsilon must be positive, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise MechanismError("sensitivity must be positive")
        if self.kind == "bdpl" and not 0 < self.delta_zone <= 0.5:
            raise MechanismError("delta_zone must lie in (0, 0.5]")
        if self.decimals < 0:
            raise MechanismError("decimals must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        fields = {k: d[k] for k in ("kind", "epsilon", "sensitivity", "delta_zone", "decimals") if k in d}
        return cls(**fields)

    def with_epsilon(self, epsilon: float) -> "NoiseSpec":
        return NoiseSpec(self.kind, epsilon, self.sensitivity, self.delta_zone, self.decimals)


@dataclass(frozen=True)
class PerturbedResponse:
    value: float
    mechanism: NoiseSpec
    epsilon_spent: float
    refused: bool = False


def _check_eps(epsilon: float):
    if not epsilon > 0:
        raise MechanismError(f"epsilon must be positive, got {epsilon}")


def laplace_perturb(y: float, spec: NoiseSpec, rng: np.random.Generator,
                    clamp: bool = False) -> PerturbedResponse:
    _check_eps(spec.epsilon)
    value = y + rng.laplace(0.0, spec.sensitivity / spec.epsilon)
    if clamp:
        value = min(max(value, 0.0), 1.0)
    return PerturbedResponse(float(value), spec, spec.epsilon)


def gaussian_perturb(y: float, spec: NoiseSpec, rng: np.random.Generator,
                     clamp: bool = False) -> PerturbedResponse:
    # sigma = sensitivity / epsilon is a simulation knob, not an (eps, delta) calibration
    _check_eps(spec.epsilon)
    value = y + rng.normal(0.0, spec.sensitivity / spec.epsilon)
    if clamp:
        value = min(max(value, 0.0), 1.0)
    return PerturbedResponse(float(value), spec, spec.epsilon)


def bdpl_keep_probability(epsilon: float) -> float:
    """Probability that randomized response reports the true label."""
    _check_eps(epsilon)
    if epsilon > 350:  # exp overflow; the keep probability is 1 to double precision
        return 1.0
    e = math.exp(epsilon)
    return 0.5 + math.sqrt(math.expm1(2 * epsilon)) / (2 + 2 * e)


def in_boundary_zone(prob: float, delta_zone: float) -> bool:
    return abs(prob - 0.5) < delta_zone


def bdpl_perturb(y: int, prob: float, spec: NoiseSpec, rng: np.random.Generator) -> PerturbedResponse:
    """Flip ``y`` near the decision boundary; pass it through elsewhere."""
    _check_eps(spec.epsilon)
    if y not in (0, 1):
        raise MechanismError(f"bdpl perturbs binary answers, got {y!r}")
    if not in_boundary_zone(prob, spec.delta_zone):
        return PerturbedResponse(float(y), spec, 0.0)
    keep = bdpl_keep_probability(spec.epsilon)
    value = y if rng.random() < keep else 1 - y
    return PerturbedResponse(float(value), spec, spec.epsilon)


def round_confidence(y: float, decimals: int) -> PerturbedResponse:
    """Half-away-from-zero rounding on the decimal representation."""
    if decimals < 0:
        raise MechanismError("decimals must be >= 0")
    q = Decimal(1).scaleb(-decimals)
    d = Decimal(repr(float(y)))
    rounded = d.copy_abs().quantize(q, rounding=ROUND_HALF_UP)
    value = float(rounded if d >= 0 else -rounded)
    return PerturbedResponse(value, NoiseSpec("rounding", decimals=decimals), 0.0)


def perturb(prob: float, spec: NoiseSpec, rng: np.random.Generator, *, response: str = "prob",
            clamp: bool = False) -> PerturbedResponse:
    """Perturb a model confidence for an API answering ``prob`` or ``label``.

    BDPL decides whether to flip the class; in ``prob`` mode a flipped answer
    is reported as the complementary confidence ``1 - prob``.
    """
    if spec.kind == "none":
        value = prob if response == "prob" else float(prob >= 0.5)
        return PerturbedResponse(float(value), spec, 0.0)
    if spec.kind == "rounding":
        out = round_confidence(prob, spec.decimals)
        if response == "label":
            return PerturbedResponse(float(out.value >= 0.5), spec, 0.0)
        return out
    if spec.kind == "bdpl":
        label = int(prob >= 0.5)
        out = bdpl_perturb(label, prob, spec, rng)
        if response == "label":
            return out
        value = prob if int(out.value) == label else 1.0 - prob
        return PerturbedResponse(float(value), spec, out.epsilon_spent)
    fn = laplace_perturb if spec.kind == "laplace" else gaussian_perturb
    out = fn(prob, spec, rng, clamp=clamp)
    if response == "label":
        return PerturbedResponse(float(out.value >= 0.5), spec, out.epsilon_spent)
    return out
