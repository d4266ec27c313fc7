"""Mask-aware preprocessing: background permutation, gray card, HSV jitter.

Each function returns a new Sample. The mask is never altered.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .data.types import Sample

HUE_RANGE = (-10.0, 18.0)
SAT_RANGE = (0.9, 1.18)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601


@dataclass(frozen=True)
class HsvJitterParams:
    hue_shift_degrees: float
    sat_multiplier: float

    @classmethod
    def draw(cls, seed: int | np.random.Generator) -> "HsvJitterParams":
        rng = np.random.default_rng(seed)
        return cls(float(rng.uniform(*HUE_RANGE)), float(rng.uniform(*SAT_RANGE)))


def fit_background(background: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scale up (aspect preserved) if needed, then center-crop to height x width."""
    bh, bw = background.shape[:2]
    if bh == 0 or bw == 0:
        raise ValueError("background image is empty")
    s = max(height / bh, width / bw)
    if s > 1:
        nw, nh = int(np.ceil(bw * s)), int(np.ceil(bh * s))
        background = cv2.resize(background, (nw, nh), interpolation=cv2.INTER_LINEAR)
        bh, bw = nh, nw
    if bh < height or bw < width:
        raise ValueError(f"background {bw}x{bh} smaller than image {width}x{height} after scaling")
    y0, x0 = (bh - height) // 2, (bw - width) // 2
    return background[y0 : y0 + height, x0 : x0 + width]


def permute_background(sample: Sample, background: np.ndarray) -> Sample:
    """Keep the card pixels and replace everything else with `background`."""
    h, w = sample.mask.shape
    bg = fit_background(np.asarray(background, dtype=np.uint8), h, w)
    card = sample.mask.astype(bool)[..., None]
    return sample.replace(image=np.where(card, sample.image, bg))


def luma(rgb: np.ndarray) -> np.ndarray:
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def gray_mask(sample: Sample) -> Sample:
    """Turn the card to gray, leave the background in color."""
    y = luma(sample.image)
    card = sample.mask.astype(bool)
    out = sample.image.copy()
    out[card] = y[card][:, None]
    return sample.replace(image=out)


def jitter_hsv(rgb: np.ndarray, params: HsvJitterParams) -> np.ndarray:
    """Shift hue (wrapping) and scale saturation (clamped) of an RGB uint8 array."""
    f = rgb.astype(np.float32) / 255.0
    hsv = cv2.cvtColor(f.reshape(-1, 1, 3), cv2.COLOR_RGB2HSV)
    hsv[..., 0] = np.mod(hsv[..., 0] + params.hue_shift_degrees, 360.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * params.sat_multiplier, 0.0, 1.0)
    back = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).reshape(rgb.shape)
    return np.clip(np.rint(back * 255.0), 0, 255).astype(np.uint8)


def hsv_jitter(sample: Sample, seed: int, params: HsvJitterParams | None = None) -> Sample:
    """Recolor card pixels with one hue/saturation draw per image."""
    params = params or HsvJitterParams.draw(seed)
    card = sample.mask.astype(bool)
    out = sample.image.copy()
    if card.any():
        out[card] = jitter_hsv(sample.image[card][None], params)[0]
    return sample.replace(image=out)


def apply_flags(
    sample: Sample,
    rng: np.random.Generator,
    background_permuter: bool = False,
    gray: bool = False,
    hsv: bool = False,
    backgrounds: list[np.ndarray] | None = None,
    prob: float = 0.5,
) -> Sample:
    """Online use during training: each enabled method fires with probability `prob`."""
    if background_permuter and backgrounds and rng.random() < prob:
        sample = permute_background(sample, backgrounds[int(rng.integers(len(backgrounds)))])
    if gray and rng.random() < prob:
        sample = gray_mask(sample)
    if hsv and rng.random() < prob:
        sample = hsv_jitter(sample, int(rng.integers(2**31)))
    return sample
