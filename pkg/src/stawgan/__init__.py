"""Thermal infrared <-> RGB aerial image translation with a target-aware dual-flow GAN."""

from .dataset import DatasetManifest, OrientedBox, PairedTranslationDataset, load_pair, make_toy_dataset
from .errors import (
    CompositionError,
    ConfigurationError,
    InvalidAnnotationError,
    NonFiniteLossError,
    ShapeError,
    StawGANError,
)
from .losses import LossReport, LossWeights, compose_objectives, dssim_loss, ssim
from .metrics import MetricReport, evaluate
from .models import ModelConfig, StawGAN, TranslationOutput, load_model, save_model
from .training import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "CompositionError",
    "ConfigurationError",
    "DatasetManifest",
    "InvalidAnnotationError",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "NonFiniteLossError",
    "OrientedBox",
    "PairedTranslationDataset",
    "ShapeError",
    "StawGAN",
    "StawGANError",
    "TrainConfig",
    "Trainer",
    "TranslationOutput",
    "compose_objectives",
    "dssim_loss",
    "evaluate",
    "load_model",
    "load_pair",
    "make_toy_dataset",
    "save_model",
    "ssim",
]
