"""From-scratch 4-class dementia-stage MRI classification stack.

numpy-only DEMNET CNN (hand-written forward/backward), SMOTE class
balancing, RMSProp training, confusion-matrix metrics, and binary
interchange formats for checkpoints and feature containers.
"""

from .dataio import (
    CLASS_NAMES,
    CLASS_TABLE,
    LabeledDataset,
    SplitSpec,
    Splits,
    bilinear_resize,
    feature_container_read,
    feature_container_write,
    load_image_dataset,
    split_dataset,
    split_indices,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    compute_metrics,
    confusion_matrix,
    one_vs_rest_counts,
    render_report,
)
from .model import (
    DemnetConfig,
    Model,
    build_demnet,
    hybrid_config,
    load_checkpoint,
    model_backward,
    model_forward,
    predict,
    save_checkpoint,
)
from .optim import RmsPropState, TrainConfig, evaluate, fit, rmsprop_step, sgd_step
from .smote import (
    FeatureMatrix,
    SmoteConfig,
    SmoteResult,
    knn_within_class,
    replicate_balance,
    smote_balance,
)
from .tensor import SEED_OFFSETS, RngState, derive_seed, stage_seed

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "CLASS_TABLE",
    "ConfusionCounts",
    "DemnetConfig",
    "FeatureMatrix",
    "LabeledDataset",
    "MetricsReport",
    "Model",
    "RmsPropState",
    "RngState",
    "SEED_OFFSETS",
    "SmoteConfig",
    "SmoteResult",
    "SplitSpec",
    "Splits",
    "TrainConfig",
    "bilinear_resize",
    "build_demnet",
    "compute_metrics",
    "confusion_matrix",
    "derive_seed",
    "evaluate",
    "feature_container_read",
    "feature_container_write",
    "fit",
    "hybrid_config",
    "knn_within_class",
    "load_checkpoint",
    "load_image_dataset",
    "model_backward",
    "model_forward",
    "one_vs_rest_counts",
    "predict",
    "render_report",
    "replicate_balance",
    "rmsprop_step",
    "save_checkpoint",
    "sgd_step",
    "smote_balance",
    "split_dataset",
    "split_indices",
    "stage_seed",
]
