"""Deep-ensemble training and distillation into single- or multi-headed
students, with entropy-based uncertainty decomposition."""

from .datasets import (
    Dataset,
    ShiftSpec,
    Standardizer,
    apply_shift,
    load_idx,
    load_idx_dataset,
    load_regression_table,
    make_spiral,
    standardize,
    train_val_test_split,
)
from .distill import (
    Hydra,
    HydraClassifier,
    HydraRegressor,
    KDClassifier,
    KDRegressor,
    TeacherTargetCache,
    grow_heads,
    load_hydra,
    save_hydra,
)
from .ensemble import (
    CategoricalEnsemblePrediction,
    DeepEnsembleClassifier,
    DeepEnsembleRegressor,
    GaussianEnsemblePrediction,
)
from .exceptions import (
    CheckpointError,
    ConfigError,
    CorruptionError,
    EmptyDatasetError,
    FormatError,
    HydraDistillError,
    ParseError,
    SchemaError,
    TemperatureError,
    TrainingError,
    ValidationError,
)
from .losses import (
    hydra_classification_loss,
    hydra_regression_loss,
    kd_classification_loss,
    kd_regression_loss,
    temper_probabilities,
)
from .metrics import (
    MetricReport,
    UncertaintyDecomposition,
    accuracy,
    brier_score,
    categorical_kl,
    gaussian_kl,
    mu_gap,
    nll,
    uncertainty_decomposition,
)
from .network import (
    GaussianPrediction,
    Layer,
    Mlp,
    Optimizer,
    build_mlp,
    count_params,
    gaussian_from_outputs,
    load_mlp,
    save_mlp,
    tempered_softmax,
)

__version__ = "0.1.0"

__all__ = [
    "CategoricalEnsemblePrediction",
    "CheckpointError",
    "ConfigError",
    "CorruptionError",
    "Dataset",
    "DeepEnsembleClassifier",
    "DeepEnsembleRegressor",
    "EmptyDatasetError",
    "FormatError",
    "GaussianEnsemblePrediction",
    "GaussianPrediction",
    "Hydra",
    "HydraClassifier",
    "HydraDistillError",
    "HydraRegressor",
    "KDClassifier",
    "KDRegressor",
    "Layer",
    "MetricReport",
    "Mlp",
    "Optimizer",
    "ParseError",
    "SchemaError",
    "ShiftSpec",
    "Standardizer",
    "TeacherTargetCache",
    "TemperatureError",
    "TrainingError",
    "UncertaintyDecomposition",
    "ValidationError",
    "accuracy",
    "apply_shift",
    "brier_score",
    "build_mlp",
    "categorical_kl",
    "count_params",
    "gaussian_from_outputs",
    "gaussian_kl",
    "grow_heads",
    "hydra_classification_loss",
    "hydra_regression_loss",
    "kd_classification_loss",
    "kd_regression_loss",
    "load_hydra",
    "load_idx",
    "load_idx_dataset",
    "load_mlp",
    "load_regression_table",
    "make_spiral",
    "mu_gap",
    "nll",
    "save_hydra",
    "save_mlp",
    "standardize",
    "temper_probabilities",
    "tempered_softmax",
    "train_val_test_split",
    "uncertainty_decomposition",
]
