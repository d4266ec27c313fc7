"""Augmentation ops with image/mask geometric consistency.

Parameter conventions follow imgaug: a 2-tuple is a range sampled uniformly on
every application (integers inclusive for integer params), a scalar is fixed.
Photometric and dropout ops touch the image only; geometric ops move image
(bilinear) and mask (nearest) with the same transform.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import cv2
import numpy as np
import yaml

from .data.types import Sample


class OpKind(str, Enum):
    PHOTOMETRIC = "photometric"
    GEOMETRIC = "geometric"
    DROPOUT = "dropout"


# name -> (kind, default params, names of integer-valued params)
OP_TABLE: dict[str, tuple[OpKind, dict[str, Any], tuple[str, ...]]] = {
    "Additive-Gaussian-Noise": (OpKind.PHOTOMETRIC, {"loc": 0.0, "scale": (0.0, 0.05 * 255), "per_channel": 0.5}, ()),
    "Additive-Laplace-Noise": (OpKind.PHOTOMETRIC, {"loc": 0.0, "scale": 0.05 * 255, "per_channel": 0.0}, ()),
    "Additive-Poisson-Noise": (OpKind.PHOTOMETRIC, {"lam": 16.0, "per_channel": 0.0}, ()),
    "Motion-Blur": (OpKind.PHOTOMETRIC, {"k": 3, "angle": (0.0, 360.0), "direction": (-1.0, 1.0)}, ("k",)),
    "AddToHueAndSaturation": (OpKind.PHOTOMETRIC, {"value": (-50, 50)}, ("value",)),
    "BilateralBlur": (OpKind.PHOTOMETRIC, {"d": (3, 10), "sigma_color": (10.0, 250.0), "sigma_space": (10.0, 250.0)}, ("d",)),
    "Coarse-Dropout": (OpKind.DROPOUT, {"p": (0.1, 0.35), "size_percent": (0.02, 0.1)}, ()),
    "Dropout2d": (OpKind.DROPOUT, {"p": 0.5}, ()),
    "Edge-Detect": (OpKind.PHOTOMETRIC, {"alpha": (0.0, 0.7)}, ()),
    "Elastic-Transformation": (OpKind.GEOMETRIC, {"alpha": (0.0, 7.0), "sigma": 0.25}, ()),
    "Gaussian-Blur": (OpKind.PHOTOMETRIC, {"sigma": 0.5}, ()),
    "Spatter": (OpKind.PHOTOMETRIC, {"severity": 3}, ("severity",)),
    "Rot180": (OpKind.GEOMETRIC, {"k": (1, 3)}, ("k",)),
    "Flipud": (OpKind.GEOMETRIC, {"p": 1.0}, ()),
    "Fliplr": (OpKind.GEOMETRIC, {"p": 1.0}, ()),
}

OP_NAMES = tuple(OP_TABLE)


@dataclass(frozen=True)
class AugOpSpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in OP_TABLE:
            raise KeyError(f"unknown augmentation op {self.name!r}")
        merged = copy.deepcopy(OP_TABLE[self.name][1])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise KeyError(f"{self.name}: unknown params {sorted(unknown)}")
        for k, v in self.params.items():
            merged[k] = tuple(v) if isinstance(v, (list, tuple)) else v
        object.__setattr__(self, "params", merged)

    @property
    def kind(self) -> OpKind:
        return OP_TABLE[self.name][0]

    def to_dict(self) -> dict:
        return {"name": self.name, "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}}


def sample_params(op: AugOpSpec, rng: np.random.Generator | int) -> dict[str, Any]:
    """Concrete parameter values for one application of `op`."""
    rng = np.random.default_rng(rng)
    ints = OP_TABLE[op.name][2]
    out = {}
    for k, v in op.params.items():
        if isinstance(v, tuple):
            lo, hi = v
            out[k] = int(rng.integers(lo, hi + 1)) if k in ints else float(rng.uniform(lo, hi))
        else:
            out[k] = v
    return out


# --------------------------------------------------------------------------
# photometric / dropout ops: (image, params, rng) -> image


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _noise_shape(img, per_channel_prob, rng):
    h, w, c = img.shape
    return (h, w, c) if rng.random() < per_channel_prob else (h, w, 1)


def _gaussian_noise(img, p, rng):
    shape = _noise_shape(img, p["per_channel"], rng)
    return _to_u8(img + rng.normal(p["loc"], p["scale"], shape))


def _laplace_noise(img, p, rng):
    shape = _noise_shape(img, p["per_channel"], rng)
    return _to_u8(img + rng.laplace(p["loc"], p["scale"], shape))


def _poisson_noise(img, p, rng):
    shape = _noise_shape(img, p["per_channel"], rng)
    sign = rng.choice((-1.0, 1.0), size=shape)
    return _to_u8(img + sign * rng.poisson(p["lam"], shape))


def motion_blur_kernel(k: int, angle: float, direction: float) -> np.ndarray:
    kernel = np.zeros((k, k), np.float32)
    d = (direction + 1.0) / 2.0
    kernel[:, k // 2] = np.linspace(d, 1.0 - d, num=k)
    rot = cv2.getRotationMatrix2D(((k - 1) / 2, (k - 1) / 2), angle, 1.0)
    kernel = cv2.warpAffine(kernel, rot, (k, k), flags=cv2.INTER_LINEAR)
    s = kernel.sum()
    return kernel / s if s > 0 else np.eye(k, dtype=np.float32)[::-1] / k


def _motion_blur(img, p, rng):
    return cv2.filter2D(img, -1, motion_blur_kernel(p["k"], p["angle"], p["direction"]), borderType=cv2.BORDER_REFLECT)


def _hue_saturation(img, p, rng):
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV).astype(np.int32)
    v = p["value"]
    # OpenCV stores hue in [0, 180); a value of 255 is a full turn
    hsv[..., 0] = np.mod(hsv[..., 0] + int(np.round(v * 180 / 255)), 180)
    hsv[..., 1] = np.clip(hsv[..., 1] + v, 0, 255)
    return cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB)


def _bilateral(img, p, rng):
    return cv2.bilateralFilter(img, p["d"], p["sigma_color"], p["sigma_space"])


def _coarse_dropout(img, p, rng):
    h, w = img.shape[:2]
    gh = max(3, int(round(h * p["size_percent"])))
    gw = max(3, int(round(w * p["size_percent"])))
    drop = (rng.random((gh, gw)) < p["p"]).astype(np.uint8)
    drop = cv2.resize(drop, (w, h), interpolation=cv2.INTER_NEAREST).astype(bool)
    out = img.copy()
    out[drop] = 0
    return out


def _dropout2d(img, p, rng):
    out = img.copy()
    if rng.random() < p["p"]:
        out[..., int(rng.integers(img.shape[2]))] = 0
    return out


EDGE_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], np.float32)


def _edge_detect(img, p, rng):
    a = p["alpha"]
    if a == 0:
        return img.copy()
    ident = np.zeros((3, 3), np.float32)
    ident[1, 1] = 1
    return cv2.filter2D(img, -1, (1 - a) * ident + a * EDGE_KERNEL)


def _gaussian_blur(img, p, rng):
    return cv2.GaussianBlur(img, (0, 0), p["sigma"])


# (liquid mean, liquid std, smoothing sigma, threshold, intensity, mud?) per severity
SPATTER_LEVELS = (
    (0.65, 0.3, 4, 0.69, 0.6, 0),
    (0.65, 0.3, 3, 0.68, 0.6, 0),
    (0.65, 0.3, 2, 0.68, 0.5, 0),
    (0.65, 0.3, 1, 0.65, 1.5, 1),
    (0.67, 0.4, 1, 0.65, 1.5, 1),
)


def _spatter(img, p, rng):
    mean, std, sigma, thresh, intensity, mud = SPATTER_LEVELS[int(p["severity"]) - 1]
    x = img.astype(np.float32) / 255.0
    h, w = img.shape[:2]
    liquid = rng.normal(mean, std, (h, w)).astype(np.float32)
    liquid = cv2.GaussianBlur(liquid, (0, 0), sigma)
    liquid[liquid < thresh] = 0
    if not mud:
        lq = np.clip(liquid * 255, 0, 255).astype(np.uint8)
        dist = (255 - cv2.Canny(lq, 50, 150)).astype(np.uint8)
        dist = cv2.distanceTransform(dist, cv2.DIST_L2, 5)
        _, dist = cv2.threshold(dist, 20, 20, cv2.THRESH_TRUNC)
        dist = cv2.blur(dist, (3, 3)).astype(np.uint8)
        dist = cv2.equalizeHist(dist)
        ker = np.array([[-2, -1, 0], [-1, 1, 1], [0, 1, 2]], np.float32)
        dist = cv2.filter2D(dist, cv2.CV_8U, ker)
        dist = cv2.blur(dist, (3, 3)).astype(np.float32)
        m = lq.astype(np.float32) * dist
        peak = m.max()
        m = m / peak * intensity if peak > 0 else m
        color = np.array([175, 238, 238], np.float32) / 255.0  # pale turquoise water
        out = np.clip(x + m[..., None] * color, 0, 1)
    else:
        m = (liquid > thresh).astype(np.float32)
        m = cv2.GaussianBlur(m, (0, 0), 1.5) * intensity * 0.5
        mud_color = np.array([63, 42, 20], np.float32) / 255.0
        m = np.clip(m, 0, 1)[..., None]
        out = x * (1 - m) + mud_color * m
    return _to_u8(out * 255.0)


PIXEL_OPS: dict[str, Callable] = {
    "Additive-Gaussian-Noise": _gaussian_noise,
    "Additive-Laplace-Noise": _laplace_noise,
    "Additive-Poisson-Noise": _poisson_noise,
    "Motion-Blur": _motion_blur,
    "AddToHueAndSaturation": _hue_saturation,
    "BilateralBlur": _bilateral,
    "Coarse-Dropout": _coarse_dropout,
    "Dropout2d": _dropout2d,
    "Edge-Detect": _edge_detect,
    "Gaussian-Blur": _gaussian_blur,
    "Spatter": _spatter,
}


# --------------------------------------------------------------------------
# geometric ops: (image, mask, params, rng) -> (image, mask)


def elastic_field(shape: tuple[int, int], alpha: float, sigma: float, rng: np.random.Generator):
    """Displacements (dx, dy) in pixels: Gaussian-smoothed uniform noise times alpha."""
    h, w = shape
    dx = rng.uniform(-1, 1, (h, w)).astype(np.float32)
    dy = rng.uniform(-1, 1, (h, w)).astype(np.float32)
    if sigma > 0:
        dx = cv2.GaussianBlur(dx, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
        dy = cv2.GaussianBlur(dy, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    return dx * alpha, dy * alpha


def nearest_remap(mask: np.ndarray, src_x: np.ndarray, src_y: np.ndarray) -> np.ndarray:
    """out[y, x] = mask[round(src_y), round(src_x)], zero outside the image."""
    h, w = mask.shape
    ix = np.floor(src_x + 0.5).astype(np.int64)
    iy = np.floor(src_y + 0.5).astype(np.int64)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros(src_x.shape, mask.dtype)
    out[inside] = mask[iy[inside], ix[inside]]
    return out


def _elastic(img, mask, p, rng):
    h, w = mask.shape
    dx, dy = elastic_field((h, w), p["alpha"], p["sigma"], rng)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    sx, sy = xx + dx, yy + dy
    out = cv2.remap(img, sx, sy, interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return out, nearest_remap(mask, sx, sy)


def _rot90(img, mask, p, rng):
    k = int(p["k"])
    return np.ascontiguousarray(np.rot90(img, k)), np.ascontiguousarray(np.rot90(mask, k))


def _flipud(img, mask, p, rng):
    if rng.random() < p["p"]:
        return np.ascontiguousarray(img[::-1]), np.ascontiguousarray(mask[::-1])
    return img.copy(), mask.copy()


def _fliplr(img, mask, p, rng):
    if rng.random() < p["p"]:
        return np.ascontiguousarray(img[:, ::-1]), np.ascontiguousarray(mask[:, ::-1])
    return img.copy(), mask.copy()


GEOMETRIC_OPS: dict[str, Callable] = {
    "Elastic-Transformation": _elastic,
    "Rot180": _rot90,
    "Flipud": _flipud,
    "Fliplr": _fliplr,
}


def apply_op(op: AugOpSpec | str, sample: Sample, seed: int) -> Sample:
    """Apply one op; the random stream is ``default_rng(seed)``, params drawn first."""
    if isinstance(op, str):
        op = AugOpSpec(op)
    rng = np.random.default_rng(seed)
    params = sample_params(op, rng)
    if op.kind is OpKind.GEOMETRIC:
        img, mask = GEOMETRIC_OPS[op.name](sample.image, sample.mask, params, rng)
        return sample.replace(image=img, mask=(mask > 0).astype(np.uint8))
    return sample.replace(image=PIXEL_OPS[op.name](sample.image, params, rng))


# --------------------------------------------------------------------------
# pipelines


@dataclass(frozen=True)
class AugPipeline:
    ops: tuple[AugOpSpec, ...]
    ops_per_sample: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not (1 <= self.ops_per_sample <= len(self.ops)):
            raise ValueError(f"ops_per_sample must be in [1, {len(self.ops)}], got {self.ops_per_sample}")

    def restricted(self, *names: str) -> "AugPipeline":
        ops = tuple(o for o in self.ops if o.name in names)
        return AugPipeline(ops, min(self.ops_per_sample, len(ops)), self.seed)

    def to_dict(self) -> dict:
        return {
            "ops_per_sample": self.ops_per_sample,
            "seed": self.seed,
            "ops": [o.to_dict() for o in self.ops],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugPipeline":
        ops = tuple(AugOpSpec(o["name"], o.get("params", {})) for o in d["ops"])
        return cls(ops, int(d.get("ops_per_sample", 2)), int(d.get("seed", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> "AugPipeline":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def default_pipeline(ops_per_sample: int = 2, seed: int = 0) -> AugPipeline:
    """All fifteen ops with their default parameters."""
    return AugPipeline(tuple(AugOpSpec(n) for n in OP_NAMES), ops_per_sample, seed)


def chosen_ops(pipeline: AugPipeline, sample_seed: int) -> tuple[list[AugOpSpec], list[int]]:
    rng = np.random.default_rng([pipeline.seed, sample_seed])
    idx = sorted(rng.choice(len(pipeline.ops), size=pipeline.ops_per_sample, replace=False).tolist())
    seeds = rng.integers(0, 2**63 - 1, size=len(idx)).tolist()
    return [pipeline.ops[i] for i in idx], seeds


def apply(pipeline: AugPipeline, sample: Sample, sample_seed: int) -> Sample:
    """Draw `ops_per_sample` distinct ops and apply them in pipeline order."""
    ops, seeds = chosen_ops(pipeline, sample_seed)
    for op, s in zip(ops, seeds):
        sample = apply_op(op, sample, s)
    return sample
