"""Reading and writing VGG Image Annotator (VIA 2.x) projects.

Both the full project file (``_via_img_metadata`` plus settings) and the bare
"export annotations as json" dictionary are accepted.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .types import PolygonAnnotation

log = logging.getLogger(__name__)


class ViaParseError(ValueError):
    pass


@dataclass
class ViaProject:
    annotations: list[tuple[str, PolygonAnnotation]] = field(default_factory=list)
    skipped_regions: int = 0
    files_without_polygons: list[str] = field(default_factory=list)
    file_attributes: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def image_ids(self) -> list[str]:
        seen = dict.fromkeys(i for i, _ in self.annotations)
        return list(seen)


def _metadata(document: dict) -> dict:
    if "_via_img_metadata" in document:
        meta = document["_via_img_metadata"]
        if not isinstance(meta, dict):
            raise ViaParseError("'_via_img_metadata' must be an object")
        return meta
    return document


def parse_via_project(document: dict | str | bytes) -> ViaProject:
    """Extract one PolygonAnnotation per polygon region.

    Non-polygon regions are counted in ``skipped_regions``; file entries that
    carry no polygon at all are listed in ``files_without_polygons``.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ViaParseError(f"project is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ViaParseError("project must be a JSON object")

    project = ViaProject()
    for key, entry in _metadata(document).items():
        if not isinstance(entry, dict) or "filename" not in entry:
            raise ViaParseError(f"entry {key!r} has no 'filename'")
        image_id = str(entry["filename"])
        regions = entry.get("regions", [])
        # VIA 1.x stored regions as {"0": {...}, "1": {...}}
        if isinstance(regions, dict):
            regions = list(regions.values())
        if not isinstance(regions, list):
            raise ViaParseError(f"entry {key!r}: 'regions' must be a list")
        project.file_attributes[image_id] = dict(entry.get("file_attributes") or {})

        n_poly = 0
        for i, region in enumerate(regions):
            try:
                shape = region["shape_attributes"]
                name = shape.get("name")
            except (KeyError, TypeError, AttributeError) as e:
                raise ViaParseError(f"entry {key!r} region {i}: missing shape_attributes") from e
            if name != "polygon":
                project.skipped_regions += 1
                log.warning("%s: skipping non-polygon region %d (%s)", image_id, i, name)
                continue
            try:
                xs, ys = shape["all_points_x"], shape["all_points_y"]
                points = list(zip(xs, ys, strict=True))
            except (KeyError, TypeError, ValueError) as e:
                raise ViaParseError(
                    f"entry {key!r} region {i}: bad all_points_x/all_points_y"
                ) from e
            project.annotations.append((image_id, PolygonAnnotation(points, image_id)))
            n_poly += 1
        if n_poly == 0:
            project.files_without_polygons.append(image_id)
    return project


def load_via_project(path: str | Path) -> ViaProject:
    return parse_via_project(Path(path).read_text(encoding="utf-8"))


def _number(v: float):
    return int(v) if float(v).is_integer() else v


def to_via_project(
    annotations: list[tuple[str, PolygonAnnotation]],
    file_sizes: dict[str, int] | None = None,
    file_attributes: dict[str, dict] | None = None,
) -> dict:
    """Serialize annotations as a VIA 2.x project document."""
    file_sizes = file_sizes or {}
    file_attributes = file_attributes or {}
    meta: dict[str, dict] = {}
    for image_id, poly in annotations:
        size = int(file_sizes.get(image_id, -1))
        key = f"{image_id}{size}"
        entry = meta.setdefault(
            key,
            {
                "filename": image_id,
                "size": size,
                "regions": [],
                "file_attributes": dict(file_attributes.get(image_id, {})),
            },
        )
        entry["regions"].append(
            {
                "shape_attributes": {
                    "name": "polygon",
                    "all_points_x": [_number(x) for x in poly.xs],
                    "all_points_y": [_number(y) for y in poly.ys],
                },
                "region_attributes": {},
            }
        )
    return {
        "_via_settings": {"project": {"name": "idseg"}},
        "_via_img_metadata": meta,
        "_via_attributes": {"region": {}, "file": {}},
        "_via_data_format_version": "2.0.10",
        "_via_image_id_list": list(meta),
    }
