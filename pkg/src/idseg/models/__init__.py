from .base import (
    Arch,
    ModelSpec,
    SegModel,
    build_model,
    count_parameters,
    export_program,
    load_program,
    load_checkpoint,
    predict_mask,
    predict_probs,
    probs_to_mask,
    resize_mask,
    save_checkpoint,
    to_input_tensor,
)
from .densenet10 import DenseNet10, build_densenet10
from .mobileunet import MobileUNet, PretrainedUnavailableError, build_mobileunet

__all__ = [
    "Arch",
    "DenseNet10",
    "MobileUNet",
    "ModelSpec",
    "PretrainedUnavailableError",
    "SegModel",
    "build_densenet10",
    "build_mobileunet",
    "build_model",
    "count_parameters",
    "export_program",
    "load_program",
    "load_checkpoint",
    "predict_mask",
    "predict_probs",
    "probs_to_mask",
    "resize_mask",
    "save_checkpoint",
    "to_input_tensor",
]
