"""Black-box variational inference for Bayesian logistic regression with many control variates."""

from .checks import run_checks
from .combiner import MomentAverages, bayes_weights, bayes_weights_general, combine, optimal_weights
from .config import ExperimentConfig
from .cv import CV_IDS, SUBSETS, evaluate_cv_set, resolve_cv_set
from .datasets import resolve_dataset
from .engine import RunConfig, run_inference, sensitivity_sweep, variance_probe
from .model import Dataset, load_dataset
from .varfam import VariationalParams

__version__ = "0.1.0"

__all__ = [
    "CV_IDS",
    "SUBSETS",
    "Dataset",
    "ExperimentConfig",
    "MomentAverages",
    "RunConfig",
    "VariationalParams",
    "bayes_weights",
    "bayes_weights_general",
    "combine",
    "evaluate_cv_set",
    "load_dataset",
    "optimal_weights",
    "resolve_cv_set",
    "resolve_dataset",
    "run_checks",
    "run_inference",
    "sensitivity_sweep",
    "variance_probe",
]
