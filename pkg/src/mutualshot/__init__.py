"""Knowledge-data fusion of a soft decision tree and a small transformer for
EEG window classification, with source-free semi-supervised adaptation."""

from .data import (EegDataset, ShiftSpec, generate_synthetic, load_bundle, load_dataset,
                   make_folds, sample_few_shot, save_bundle, save_dataset)
from .errors import ConfigError, FormatError, NumericError
from .features import extract_feature_matrix, extract_features
from .kdf import ModelBundle, evaluate_bundle, init_bundle, jsd, kdf_losses, kdf_train
from .metrics import compute_metrics, cv_run
from .sdt import SoftDecisionTree
from .shot import AdaptFlags, adapt, im_loss
from .vit import VisionTransformer, VitConfig

__version__ = "0.1.0"

__all__ = [
    "AdaptFlags", "ConfigError", "EegDataset", "FormatError", "ModelBundle", "NumericError",
    "ShiftSpec", "SoftDecisionTree", "VisionTransformer", "VitConfig", "adapt",
    "compute_metrics", "cv_run", "evaluate_bundle", "extract_feature_matrix",
    "extract_features", "generate_synthetic", "im_loss", "init_bundle", "jsd", "kdf_losses",
    "kdf_train", "load_bundle", "load_dataset", "make_folds", "sample_few_shot", "save_bundle",
    "save_dataset",
]
