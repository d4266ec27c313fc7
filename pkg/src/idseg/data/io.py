"""Dataset directory layout.

    <root>/images/<split>/<id>.png   RGB image
    <root>/masks/<split>/<id>.png    8-bit mask, 0 = background, 255 = card
    <root>/meta.csv                  source_id,country_card,capture_source,split,width,height
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from .types import Sample, SampleMeta, Split

META_COLUMNS = ("source_id", "country_card", "capture_source", "split", "width", "height")


def read_image(path: str | Path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_image(path: str | Path, rgb: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write {path}")


def read_mask(path: str | Path) -> np.ndarray:
    m = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if m is None:
        raise FileNotFoundError(f"cannot read mask {path}")
    return (m > 127).astype(np.uint8)


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), (np.asarray(mask) > 0).astype(np.uint8) * 255):
        raise OSError(f"cannot write {path}")


def sample_paths(root: Path, meta: SampleMeta) -> tuple[Path, Path]:
    split = meta.split.value
    return (
        root / "images" / split / f"{meta.source_id}.png",
        root / "masks" / split / f"{meta.source_id}.png",
    )


def write_sample(root: str | Path, sample: Sample) -> dict:
    root = Path(root)
    ip, mp = sample_paths(root, sample.meta)
    write_image(ip, sample.image)
    write_mask(mp, sample.mask)
    h, w = sample.mask.shape
    m = sample.meta
    return {
        "source_id": m.source_id,
        "country_card": m.country_card.value,
        "capture_source": m.capture_source.value,
        "split": m.split.value,
        "width": w,
        "height": h,
    }


def write_meta(root: str | Path, rows: Iterable[dict]) -> Path:
    path = Path(root) / "meta.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=META_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def write_dataset(root: str | Path, samples: Iterable[Sample]) -> Path:
    rows = [write_sample(root, s) for s in samples]
    return write_meta(root, rows)


def read_meta(root: str | Path) -> list[dict]:
    path = Path(root) / "meta.csv"
    if not path.exists():
        raise FileNotFoundError(f"no meta.csv in {root}")
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    missing = set(META_COLUMNS) - set(rows[0] if rows else META_COLUMNS)
    if missing:
        raise ValueError(f"meta.csv lacks columns {sorted(missing)}")
    return rows


def read_dataset(root: str | Path, split: Split | str | None = None) -> list[Sample]:
    """Load samples (optionally one split) in meta.csv order."""
    root = Path(root)
    split = Split(split) if split is not None else None
    out = []
    for r in read_meta(root):
        meta = SampleMeta(r["source_id"], r["country_card"], r["capture_source"], r["split"])
        if split is not None and meta.split is not split:
            continue
        ip, mp = sample_paths(root, meta)
        out.append(Sample(read_image(ip), read_mask(mp), meta))
    return out


def available_splits(root: str | Path) -> set[Split]:
    return {Split(r["split"]) for r in read_meta(root)}
