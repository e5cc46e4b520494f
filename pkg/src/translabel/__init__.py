"""Transductive label inference over vision-language embeddings.

Given precomputed unit-norm image embeddings, a class list, and a bank of
per-class attribute texts, the engine infers a soft label for every image
by alternating three steps: confusion-driven attribute generation through
a language-model endpoint, block majorize-minimization of a clustering +
graph-agreement + text-prior objective, and (through an external encoder
bridge) pseudo-label fine-tuning of the encoders.
"""

from .confusion import ConfusionEntry, ConfusionReport, mine, select_pairs
from .graph import AffinityGraph, build_graph
from .io import (
    DatasetManifest,
    FormatError,
    ImageEntry,
    RunResult,
    compute_metrics,
    load_bank,
    load_features,
    load_manifest,
    load_result,
    save_bank,
    save_features,
    save_manifest,
    save_result,
)
from .pipeline import (
    AdaptJob,
    PipelineError,
    RunConfig,
    apply_fewshot,
    build_adapt_job,
    run,
    seen_class_split,
)
from .prior import TextPriorCache, compute_text_prior, mean_similarity, text_predictions
from .solver import (
    SolverConfig,
    gaussian_log_density,
    gmm_update,
    objective,
    transduct,
    z_update,
)
from .state import (
    Assignments,
    AttributeBank,
    AttributeRecord,
    FeatureMatrix,
    GmmState,
    TextPrior,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptJob",
    "AffinityGraph",
    "Assignments",
    "AttributeBank",
    "AttributeRecord",
    "ConfusionEntry",
    "ConfusionReport",
    "DatasetManifest",
    "FeatureMatrix",
    "FormatError",
    "GmmState",
    "ImageEntry",
    "PipelineError",
    "RunConfig",
    "RunResult",
    "SolverConfig",
    "TextPrior",
    "TextPriorCache",
    "apply_fewshot",
    "build_adapt_job",
    "build_graph",
    "compute_metrics",
    "compute_text_prior",
    "gaussian_log_density",
    "gmm_update",
    "load_bank",
    "load_features",
    "load_manifest",
    "load_result",
    "mean_similarity",
    "mine",
    "objective",
    "run",
    "save_bank",
    "save_features",
    "save_manifest",
    "save_result",
    "seen_class_split",
    "select_pairs",
    "text_predictions",
    "transduct",
    "validate",
    "z_update",
]
