"""Query-flooding parameter duplication attacks and monitoring-based
differential privacy defenses for small binary classifiers."""

from .attack import ExtractedModel, attack_logistic, attack_shadow, find_optimal_r, solve_cramer
from .data import Dataset, Schema, load_csv, preprocess, split, synthesize
from .defense import DefendedEndpoint, PlainEndpoint, PrivacyAccountant, apba_allocate
from .experiments import PRESETS, ExperimentConfig, ResultRow, emit_results, run_experiment
from .mechanisms import NoiseSpec, perturb
from .metrics import accuracy, evaluate, r_test, r_unif
from .models import LogisticModel, NeuralModel, TrainConfig, train_logistic, train_nn
from .monitor import Monitor, warning_baseline

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DefendedEndpoint", "ExperimentConfig", "ExtractedModel", "LogisticModel", "Monitor",
    "NeuralModel", "NoiseSpec", "PRESETS", "PlainEndpoint", "PrivacyAccountant", "ResultRow", "Schema",
    "TrainConfig", "accuracy", "apba_allocate", "attack_logistic", "attack_shadow", "emit_results",
    "evaluate", "find_optimal_r", "load_csv", "perturb", "preprocess", "r_test", "r_unif",
    "run_experiment", "solve_cramer", "split", "synthesize", "train_logistic", "train_nn",
    "warning_baseline",
]
