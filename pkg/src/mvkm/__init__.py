"""Multi-view tensor factorization for modeling student knowledge over time."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    InteractionRecord,
    ViewSpec,
    load_dataset,
    save_dataset,
    split_prefix_suffix,
    split_student_stratified,
)
from .model import (
    HyperParams,
    ModelParams,
    init_params,
    knowledge,
    load_params,
    predict_graded,
    predict_graded_clipped,
    predict_nongraded,
    save_params,
    validate_params,
)
from .synth import SynthConfig, generate
from .train import ObjectiveBreakdown, fit, fold_in, gradients, objective, project_simplex
from .evaluate import EvalReport, avg_baseline, evaluate_online, grid_search, metrics
from .analysis import (
    ClusterAssignment,
    bias_score_correlation,
    knowledge_curves,
    material_clusters,
    spectral_cluster,
)

__all__ = [
    "Dataset",
    "InteractionRecord",
    "ViewSpec",
    "load_dataset",
    "save_dataset",
    "split_prefix_suffix",
    "split_student_stratified",
    "HyperParams",
    "ModelParams",
    "init_params",
    "knowledge",
    "load_params",
    "predict_graded",
    "predict_graded_clipped",
    "predict_nongraded",
    "save_params",
    "validate_params",
    "SynthConfig",
    "generate",
    "ObjectiveBreakdown",
    "fit",
    "fold_in",
    "gradients",
    "objective",
    "project_simplex",
    "EvalReport",
    "avg_baseline",
    "evaluate_online",
    "grid_search",
    "metrics",
    "ClusterAssignment",
    "bias_score_correlation",
    "knowledge_curves",
    "material_clusters",
    "spectral_cluster",
]
