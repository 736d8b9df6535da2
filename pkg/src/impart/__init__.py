"""Imperceptible label-specific backdoor attack toolkit.

Sample-specific triggers are forged against a surrogate classifier by
alternating between a targeted-misclassification step and a perceptual
color-difference (CIEDE2000) minimization step, then injected into a
fraction of the training set with remapped labels.
"""

from .color import (
    Ciede2000Params,
    LabImage,
    ciede2000_lab_t,
    delta_e00_map,
    delta_e00_map_t,
    delta_e00_norm,
    delta_e00_norm_t,
    srgb_to_lab,
    srgb_to_lab_t,
)
from .config import DEFAULT_CONFIG, ConfigError, load_config
from .data import LabeledDataset, load_image_folder, make_desk_dataset, save_image_folder
from .defense import (
    SpectralConfig,
    StripConfig,
    spectral_detect,
    spectral_scores,
    strip_entropy,
    strip_sweep,
)
from .labels import LabelMap
from .models import MODEL_REGISTRY, build_model
from .pipeline import (
    ModelCheckpoint,
    PoisonPlan,
    TrainConfig,
    evaluate_accuracy,
    poison_test_set,
    poison_training_set,
    select_poison_subset,
    train_classifier,
)
from .quality import QualityReport, batch_quality, pair_quality, psnr, ssim
from .reports import config_hash, read_poison_manifest, write_poison_manifest
from .trigger import SurrogateHandle, TriggerConfig, TriggerResult, forge_batch, forge_trigger

__version__ = "0.1.0"

__all__ = [
    "Ciede2000Params",
    "ConfigError",
    "DEFAULT_CONFIG",
    "LabImage",
    "LabelMap",
    "LabeledDataset",
    "MODEL_REGISTRY",
    "ModelCheckpoint",
    "PoisonPlan",
    "QualityReport",
    "SpectralConfig",
    "StripConfig",
    "SurrogateHandle",
    "TrainConfig",
    "TriggerConfig",
    "TriggerResult",
    "batch_quality",
    "build_model",
    "ciede2000_lab_t",
    "config_hash",
    "delta_e00_map",
    "delta_e00_map_t",
    "delta_e00_norm",
    "delta_e00_norm_t",
    "evaluate_accuracy",
    "forge_batch",
    "forge_trigger",
    "load_config",
    "load_image_folder",
    "make_desk_dataset",
    "pair_quality",
    "poison_test_set",
    "poison_training_set",
    "psnr",
    "read_poison_manifest",
    "save_image_folder",
    "select_poison_subset",
    "spectral_detect",
    "spectral_scores",
    "srgb_to_lab",
    "srgb_to_lab_t",
    "ssim",
    "strip_entropy",
    "strip_sweep",
    "train_classifier",
    "write_poison_manifest",
]
