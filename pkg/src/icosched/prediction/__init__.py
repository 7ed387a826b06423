from .features import FEATURE_NAMES, HW_EVENTS, N_FEATURES, PERF_METRICS, build_feature_vector
from .forest import ForestModel, ForestParams, Tree, predict_latency, train_forest
from .linear import LinearModel, fit_linear, predict_resources
from .metrics import EvalMetrics, evaluate

__all__ = [
    "FEATURE_NAMES",
    "HW_EVENTS",
    "N_FEATURES",
    "PERF_METRICS",
    "EvalMetrics",
    "ForestModel",
    "ForestParams",
    "LinearModel",
    "Tree",
    "build_feature_vector",
    "evaluate",
    "fit_linear",
    "predict_latency",
    "predict_resources",
    "train_forest",
]
