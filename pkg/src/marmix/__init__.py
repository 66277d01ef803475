"""Semi-supervised two-component Gaussian mixtures with a MAR label mechanism.

Missing-label probability is modeled through squared margin confidence with
an Aranda-Ordaz link, and all parameters are fitted jointly by ECM.
"""
from .data import Dataset, SimSpec, apply_mar_deletion, load_magic_csv, preprocess_magic, simulate
from .ecm import EcmConfig, FitReport, FullParams, fit, full_loglik, impute_labels
from .estimators import LogisticBaseline, MarMixtureClassifier
from .links import AoParams, LogitParams
from .metrics import MetricsReport, evaluate
from .mixture import MixtureParams

__all__ = [
    "AoParams", "Dataset", "EcmConfig", "FitReport", "FullParams", "LogisticBaseline",
    "LogitParams", "MarMixtureClassifier", "MetricsReport", "MixtureParams", "SimSpec",
    "apply_mar_deletion", "evaluate", "fit", "full_loglik", "impute_labels",
    "load_magic_csv", "preprocess_magic", "simulate",
]
__version__ = "0.1.0"
