"""Synthetic-image detection from grouped SRM residual views and hypernetwork-generated LoRA experts."""

from .backbone import BackboneSpec, DetectorNet, ModelConfig, build_model, extract_features, forward
from .detector import DetectorModel, Verdict, detect, detect_batch
from .filterbank import GROUPS, FilterBank, FilterGroup, FilterKernel, load_kernels, make_views
from .hyperlora import HyperNetwork, LoRAWeights, adapted_forward, generate_lora
from .objective import LossConfig, bce_loss, bce_with_logits, total_loss
from .trainer import TrainConfig, Trainer, augment, train, train_step

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec", "DetectorModel", "DetectorNet", "FilterBank", "FilterGroup", "FilterKernel",
    "GROUPS", "HyperNetwork", "LoRAWeights", "LossConfig", "ModelConfig", "TrainConfig", "Trainer",
    "Verdict", "adapted_forward", "augment", "bce_loss", "bce_with_logits", "build_model", "detect",
    "detect_batch", "extract_features", "forward", "generate_lora", "load_kernels", "make_views",
    "total_loss", "train", "train_step",
]
