from __future__ import annotations

import warnings

import numpy as np

from .types import PolygonAnnotation


class EmptyMaskWarning(UserWarning):
    """The polygon covers no pixel center inside the image."""


def rasterize_polygon(poly: PolygonAnnotation, width: int, height: int) -> np.ndarray:
    """Fill a closed polygon into a (height, width) uint8 {0, 1} mask.

    A pixel is set iff its center (x + 0.5, y + 0.5) is inside the polygon under
    the even-odd rule. Only centers inside the image are tested, which is the
    same as clipping the polygon to the image rectangle first.
    """
    if width < 1 or height < 1:
        raise ValueError(f"image size must be >= 1, got {width}x{height}")
    pts = np.asarray(poly.points, dtype=np.float64)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    # horizontal edges never cross a scanline
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]

    mask = np.zeros((height, width), dtype=np.uint8)
    centers_x = np.arange(width, dtype=np.float64) + 0.5
    r0, r1 = 0, 0
    if len(y0):
        lo, hi = min(y0.min(), y1.min()), max(y0.max(), y1.max())
        r0 = max(0, int(np.floor(lo - 0.5)))
        r1 = min(height, int(np.ceil(hi + 0.5)) + 1)
    for row in range(r0, r1):
        yc = row + 0.5
        crossing = (y0 > yc) != (y1 > yc)
        if not crossing.any():
            continue
        xa, ya, xb, yb = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
        x_int = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        # number of crossings strictly to the right of each center
        right = len(x_int) - np.searchsorted(x_int, centers_x, side="right")
        mask[row] = (right & 1).astype(np.uint8)

    if not mask.any():
        warnings.warn(
            f"polygon for {poly.image_id!r} covers no pixel of a {width}x{height} image",
            EmptyMaskWarning,
            stacklevel=2,
        )
    return mask


def rasterize_all(polys: list[PolygonAnnotation], width: int, height: int) -> np.ndarray:
    """Union of several polygons (an image may carry more than one region)."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for p in polys:
        mask |= rasterize_polygon(p, width, height)
    return mask


def mask_to_polygon(mask: np.ndarray, image_id: str = "") -> PolygonAnnotation | None:
    """Largest outer contour of a binary mask, for exporting predictions to VIA."""
    import cv2

    contours, _ = cv2.findContours(
        np.ascontiguousarray(mask, dtype=np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE
    )
    if not contours:
        return None
    c = max(contours, key=cv2.contourArea).reshape(-1, 2)
    if len(c) < 3:
        return None
    return PolygonAnnotation([(int(x), int(y)) for x, y in c], image_id)
