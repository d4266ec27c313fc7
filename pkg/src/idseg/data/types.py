from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class CountryCard(str, Enum):
    ARG1 = "ARG1"
    ARG2 = "ARG2"
    CHL1 = "CHL1"
    CHL2 = "CHL2"
    MEX = "MEX"


class CaptureSource(str, Enum):
    DIGITAL = "Digital"
    COMPOSITE = "Composite"
    PRINTED = "Printed"
    DISPLAY = "Display"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


NUM_CLASSES = 2


@dataclass(frozen=True)
class SampleMeta:
    source_id: str
    country_card: CountryCard = CountryCard.CHL1
    capture_source: CaptureSource = CaptureSource.DIGITAL
    split: Split = Split.TRAIN

    def __post_init__(self):
        # accept plain strings from csv / yaml
        object.__setattr__(self, "country_card", CountryCard(self.country_card))
        object.__setattr__(self, "capture_source", CaptureSource(self.capture_source))
        object.__setattr__(self, "split", Split(self.split))

    @property
    def stratum(self) -> tuple[CountryCard, CaptureSource]:
        return (self.country_card, self.capture_source)

    def with_split(self, split: Split | str) -> "SampleMeta":
        return SampleMeta(self.source_id, self.country_card, self.capture_source, Split(split))


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check that `mask` is a 2-D label map over {0, 1} and return it as uint8."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and not np.isin(mask, (0, 1)).all():
        raise ValueError("mask labels must be in {0, 1}")
    return mask.astype(np.uint8, copy=False)


@dataclass
class Sample:
    """An RGB uint8 image, its binary card mask and provenance metadata."""

    image: np.ndarray
    mask: np.ndarray
    meta: SampleMeta

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {self.image.shape}")
        if self.image.dtype != np.uint8:
            raise ValueError(f"image must be uint8, got {self.image.dtype}")
        self.mask = validate_mask(self.mask)
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(
                f"image {self.image.shape[:2]} and mask {self.mask.shape} sizes differ"
            )

    @property
    def source_id(self) -> str:
        return self.meta.source_id

    def replace(self, image=None, mask=None, meta=None) -> "Sample":
        return Sample(
            self.image if image is None else image,
            self.mask if mask is None else mask,
            self.meta if meta is None else meta,
        )


@dataclass(frozen=True)
class PolygonAnnotation:
    """Closed card boundary in pixel coordinates; the last vertex joins the first."""

    points: tuple[tuple[float, float], ...]
    image_id: str = ""

    def __init__(self, points: Sequence[Sequence[float]], image_id: str = ""):
        pts = tuple((float(x), float(y)) for x, y in points)
        if len(pts) < 3:
            raise PolygonValidationError(
                f"polygon for {image_id!r} has {len(pts)} vertices, need at least 3"
            )
        if not all(math.isfinite(v) for p in pts for v in p):
            raise PolygonValidationError(f"polygon for {image_id!r} has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "image_id", image_id)

    @property
    def xs(self) -> list[float]:
        return [p[0] for p in self.points]

    @property
    def ys(self) -> list[float]:
        return [p[1] for p in self.points]


class PolygonValidationError(ValueError):
    pass


@dataclass
class SplitAssignment:
    ratios: tuple[float, float, float]
    seed: int
    assignment: dict[str, Split] = field(default_factory=dict)

    def ids(self, split: Split | str) -> list[str]:
        split = Split(split)
        return [k for k, v in self.assignment.items() if v is split]

    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(self.ids(s)) for s in Split)  # type: ignore[return-value]
