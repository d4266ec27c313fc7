from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT = "idseg-checkpoint"
CHECKPOINT_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Arch(str, Enum):
    MOBILEUNET = "MobileUNet"
    DENSENET10 = "DenseNet10"


@dataclass(frozen=True)
class ModelSpec:
    arch: Arch
    input_size: int = 224
    num_classes: int = 2
    growth_rate: int = 5
    pretrained_encoder: bool = True
    freeze_encoder: bool = False

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.input_size <= 0 or self.input_size % 32:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.growth_rate < 1:
            raise ValueError("growth_rate must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.value
        return d


class Normalize(nn.Module):
    def __init__(self, mean=IMAGENET_MEAN, std=IMAGENET_STD):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


class SegModel(nn.Module):
    """Segmentation network mapping N x 3 x S x S images in [0, 1] to
    per-pixel class probabilities N x C x S x S (softmax over C)."""

    spec: ModelSpec

    def logits(self, x: torch.Tensor) -> torch.Tensor:  # pragma: no cover - abstract
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=1)

    @property
    def parameter_count(self) -> int:
        return count_parameters(self)


def count_parameters(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_model(spec: ModelSpec, encoder_weights: str | Path | None = None) -> SegModel:
    from .densenet10 import build_densenet10
    from .mobileunet import build_mobileunet

    if spec.arch is Arch.MOBILEUNET:
        return build_mobileunet(spec, encoder_weights=encoder_weights)
    return build_densenet10(spec)


def to_input_tensor(images: list[np.ndarray] | np.ndarray, size: int) -> torch.Tensor:
    """Resize RGB uint8 images to size x size (no aspect preservation) as N x 3 x S x S."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    batch = np.stack(
        [
            img if img.shape[:2] == (size, size) else cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
            for img in images
        ]
    )
    return torch.from_numpy(batch).permute(0, 3, 1, 2).float().div_(255.0)


def probs_to_mask(probs: np.ndarray) -> np.ndarray:
    """C x H x W probabilities -> H x W labels; ties go to background."""
    if probs.shape[0] == 2:
        return (probs[1] > probs[0]).astype(np.uint8)
    lab = np.argmax(probs, axis=0)  # first max wins, i.e. class 0 on ties
    return (lab > 0).astype(np.uint8)


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    if mask.shape == (height, width):
        return mask
    return cv2.resize(mask, (width, height), interpolation=cv2.INTER_NEAREST)


@torch.no_grad()
def predict_probs(model: SegModel, image: np.ndarray) -> np.ndarray:
    model.eval()
    x = to_input_tensor(image, model.spec.input_size)
    return model(x)[0].cpu().numpy()


def predict_mask(model: SegModel, image: np.ndarray) -> np.ndarray:
    """Binary H x W mask for an image of any size."""
    h, w = image.shape[:2]
    return resize_mask(probs_to_mask(predict_probs(model, image)), h, w)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: SegModel, out_dir: str | Path, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "weights.pt")
    info = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "parameter_count": count_parameters(model),
        **(extra or {}),
    }
    (out / "model.json").write_text(json.dumps(info, indent=2))
    return out


def load_checkpoint(path: str | Path) -> SegModel:
    path = Path(path)
    info_path = path / "model.json"
    if not info_path.exists():
        raise FileNotFoundError(f"no model.json in checkpoint {path}")
    info = json.loads(info_path.read_text())
    if info.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an idseg checkpoint")
    if int(info.get("version", 0)) > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {info['version']} is newer than supported {CHECKPOINT_VERSION}")
    spec = dict(info["spec"])
    spec["pretrained_encoder"] = False  # weights come from the checkpoint
    model = build_model(ModelSpec(**spec))
    model.load_state_dict(torch.load(path / "weights.pt", map_location="cpu", weights_only=True))
    model.eval()
    return model


def export_program(model: SegModel, path: str | Path) -> Path:
    """Save the inference graph as a torch.export program (.pt2) for runtimes without the Python model code."""
    model.eval()
    s = model.spec.input_size
    program = torch.export.export(model, (torch.zeros(1, 3, s, s),))
    torch.export.save(program, str(path))
    return Path(path)


def load_program(path: str | Path) -> nn.Module:
    return torch.export.load(str(path)).module()
