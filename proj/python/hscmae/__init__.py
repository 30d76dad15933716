"""Audio-visual representation learning: masked student, EMA teacher, DCCA."""

from ._hscmae import (
    Error,
    FeatureSet,
    LinearCcaModel,
    RetrievalReport,
    SynthConfig,
    TrainResult,
    canonical_correlations,
    cross_modal_map,
    dcca_loss,
    fit_linear_cca,
    generate_synthetic,
    load_features,
    mean_average_precision,
    save_features,
    train,
)

__all__ = [
    "Error",
    "FeatureSet",
    "LinearCcaModel",
    "RetrievalReport",
    "SynthConfig",
    "TrainResult",
    "canonical_correlations",
    "cross_modal_map",
    "dcca_loss",
    "fit_linear_cca",
    "generate_synthetic",
    "load_features",
    "mean_average_precision",
    "save_features",
    "train",
]
