"""Bounding-box annotations from rendered masks.

Boxes are written one per line as

    class_id x_center y_center width height

with coordinates normalized to (0, 1] by the image size, matching the
common detector training layout.  Box edges sit on pixel boundaries: a
single pixel at column c spans [c, c+1) so its box has width 1/W and
center (c + 0.5) / W.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import FormatError, ParameterError
from .rasterizer import RenderOutput

DEFAULT_THRESHOLD = 0.1
DEFAULT_MIN_AREA = 16

# 8-connectivity: diagonal pixels belong to the same component
_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass
class AnnotationRecord:
    """One labeled box. bbox is (x_center, y_center, width, height), normalized."""

    class_id: int
    bbox: tuple[float, float, float, float]
    pixel_area: int

    def __post_init__(self) -> None:
        self.class_id = int(self.class_id)
        self.pixel_area = int(self.pixel_area)
        if self.class_id < 0:
            raise ParameterError("class ids must be non-negative")
        if self.pixel_area < 1:
            raise ParameterError("a box must cover at least one pixel")
        x, y, w, h = (float(v) for v in self.bbox)
        self.bbox = (x, y, w, h)
        if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise ParameterError("box width and height must lie in (0, 1]")
        if not (0.0 < x < 1.0 and 0.0 < y < 1.0):
            raise ParameterError("box center must lie inside the image")

    def format_line(self) -> str:
        x, y, w, h = self.bbox
        return f"{self.class_id} {x:.6f} {y:.6f} {w:.6f} {h:.6f}"


def binarize(render: RenderOutput, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean foreground mask from a render.

    When the render carries a label image, foreground is label != 0 and
    the threshold is ignored. Otherwise a pixel is foreground when the
    maximum of its color channels exceeds `threshold` (masks are
    rendered on black, so any visible splat lifts the channels).
    """
    if render.label is not None:
        return render.label != 0
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold {threshold} outside (0, 1)")
    return np.max(render.color, axis=2) > threshold


def components(mask: np.ndarray, min_area: int = DEFAULT_MIN_AREA) -> list[np.ndarray]:
    """Connected foreground regions of a boolean mask, 8-connected.

    Regions smaller than min_area pixels are discarded. Returns one
    (K, 2) array of (row, col) pixel coordinates per region, each in
    row-major order, regions sorted by size descending with ties broken
    by first pixel in row-major order.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ParameterError("mask must be a 2D array")
    if mask.dtype != bool:
        raise ParameterError("mask must be boolean; binarize renders first")
    if min_area < 1:
        raise ParameterError("min_area must be at least 1")

    labeled, count = ndimage.label(mask, structure=_STRUCTURE)
    regions = []
    for index, sl in enumerate(ndimage.find_objects(labeled), start=1):
        if sl is None:
            continue
        local = np.argwhere(labeled[sl] == index)
        if local.shape[0] < min_area:
            continue
        coords = local + [s.start for s in sl]
        regions.append(coords)
    # np.argwhere scans row-major, so coords[0] is each region's first pixel
    regions.sort(key=lambda c: (-c.shape[0], int(c[0, 0]), int(c[0, 1])))
    return regions


def to_annotation(
    component: np.ndarray, image_width: int, image_height: int, class_id: int
) -> AnnotationRecord:
    """Axis-aligned box around one component, normalized to the image."""
    component = np.asarray(component)
    if component.ndim != 2 or component.shape[1] != 2 or component.shape[0] == 0:
        raise ParameterError("component must be a non-empty (K, 2) array of (row, col)")
    if image_width < 1 or image_height < 1:
        raise ParameterError("image size must be at least 1x1")
    rows = component[:, 0]
    cols = component[:, 1]
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    if r0 < 0 or c0 < 0 or r1 >= image_height or c1 >= image_width:
        raise ParameterError("component pixels fall outside the image")
    w = (c1 - c0 + 1) / image_width
    h = (r1 - r0 + 1) / image_height
    x = (c0 + c1 + 1) / (2.0 * image_width)
    y = (r0 + r1 + 1) / (2.0 * image_height)
    return AnnotationRecord(class_id=class_id, bbox=(x, y, w, h), pixel_area=component.shape[0])


def annotate(
    render: RenderOutput,
    class_id: int,
    threshold: float = DEFAULT_THRESHOLD,
    min_area: int = DEFAULT_MIN_AREA,
    merge_components: bool = False,
) -> list[AnnotationRecord]:
    """Boxes for every visible region of a mask render.

    With merge_components, all surviving regions collapse into a single
    box (useful when one tool fragments behind occluders).
    """
    height, width = render.alpha.shape
    regions = components(binarize(render, threshold), min_area)
    if not regions:
        return []
    if merge_components:
        regions = [np.concatenate(regions, axis=0)]
    return [to_annotation(region, width, height, class_id) for region in regions]


def write_annotations(records: Sequence[AnnotationRecord], path: str | Path) -> None:
    """One `class_id x y w h` line per record; empty file for no records."""
    with open(path, "w", encoding="ascii") as fh:
        for record in records:
            fh.write(record.format_line() + "\n")


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Parse a file written by write_annotations.

    The line format does not carry pixel areas, so records come back
    with pixel_area 1.
    """
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != 5:
                raise FormatError(f"{path}: line {lineno}: expected 5 fields, got {len(fields)}")
            try:
                class_id = int(fields[0])
                values = [float(f) for f in fields[1:]]
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: malformed numbers") from None
            records.append(
                AnnotationRecord(class_id=class_id, bbox=tuple(values), pixel_area=1)
            )
    return records
