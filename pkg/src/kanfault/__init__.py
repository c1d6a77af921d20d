"""Kolmogorov-Arnold networks for vibration-based fault diagnosis.

Feature extraction, attribution-driven feature selection, Pareto-based
hyperparameter search and symbolic distillation of trained networks.
"""

from .errors import ConfigError, DataError, KanFaultError, NumericalError
from .estimators import KANClassifier, KANFeatureSelector, SymbolicKANClassifier
from .features import FeatureId, FeatureMatrix, extract_library
from .model import KanModel, init_model, model_forward
from .pipeline import RunConfig, TaskSpec, emit_report, ingest, run_task, split_stratified
from .selection import pareto_front, select_features, select_model
from .splines import SplineConfig, SplineGrid, basis_batch, make_grid
from .symbolic import SymbolicModel, decision_boundary_1d, distill, fit_edge, render
from .training import TrainConfig, attribution, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FeatureId",
    "FeatureMatrix",
    "KANClassifier",
    "KANFeatureSelector",
    "KanFaultError",
    "KanModel",
    "NumericalError",
    "RunConfig",
    "SplineConfig",
    "SplineGrid",
    "SymbolicKANClassifier",
    "SymbolicModel",
    "TaskSpec",
    "TrainConfig",
    "attribution",
    "basis_batch",
    "decision_boundary_1d",
    "distill",
    "emit_report",
    "extract_library",
    "fit_edge",
    "ingest",
    "init_model",
    "make_grid",
    "model_forward",
    "pareto_front",
    "render",
    "run_task",
    "select_features",
    "select_model",
    "split_stratified",
    "train",
]
