"""Ordered-choice modelling: ordered logit, residual ordinal logit, and post-estimation analysis."""

__version__ = "0.1.0"

from .data import Dataset, DesignSpec, ScalingParams, design_matrix, load_csv, split, standardize, write_csv
from .discretize import Breaks, assign_categories, jenks_breaks
from .econ import (EconReport, binary_effect, category_representatives, elasticity,
                   expected_value, market_share, substitution_curve)
from .errors import DataError, NumericalError
from .evaluation import FitReport, aic, fit_report, format_report, model_log_likelihood, mpe, t_stats
from .ordered_logit import OrderedLogitFit, fit_ordered_logit
from .reslogit import ReslogitFit, ReslogitParams, TrainConfig
from .reslogit import fit as fit_reslogit
from .synth import GenSpec, bayes_accuracy, brute_force_jenks, generate, true_choice_probs

__all__ = [
    "__version__", "Dataset", "DesignSpec", "ScalingParams", "design_matrix", "load_csv", "split",
    "standardize", "write_csv", "Breaks", "assign_categories", "jenks_breaks", "EconReport",
    "binary_effect", "category_representatives", "elasticity", "expected_value", "market_share",
    "substitution_curve", "DataError", "NumericalError", "FitReport", "aic", "fit_report",
    "format_report", "model_log_likelihood", "mpe", "t_stats", "OrderedLogitFit",
    "fit_ordered_logit", "ReslogitFit", "ReslogitParams", "TrainConfig", "fit_reslogit",
    "GenSpec", "bayes_accuracy", "brute_force_jenks", "generate", "true_choice_probs",
]
