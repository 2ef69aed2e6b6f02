"""Bounding-box geometry: rider-region extension, frame clipping, and IoU.

Boxes live in original-frame pixel coordinates: x grows rightward, y grows
downward, origin at the top-left, and a box covers the half-open rectangle
[x, x+w) x [y, y+h). Coordinates are real-valued; rounding to pixel indices
happens only at crop time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import GeometryError

__all__ = ["BoundingBox", "FrameDims", "ExtendedRegion", "extend_region", "iou"]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle (x, y, w, h) with positive extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            try:
                v = float(getattr(self, name))
            except (TypeError, ValueError) as exc:
                raise GeometryError(f"box {name} must be a number, got {getattr(self, name)!r}") from exc
            if not math.isfinite(v):
                raise GeometryError(f"box {name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box must have positive extent, got w={self.w}, h={self.h}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        """Serialized form used in manifests and reports: [x, y, w, h]."""
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if len(values) != 4:
            raise GeometryError(f"expected [x, y, w, h], got {values!r}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class FrameDims:
    """Frame size in pixels."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"frame dims must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class ExtendedRegion:
    """An enlarged detection box after clipping against its frame."""

    box: BoundingBox
    source: BoundingBox
    frame: FrameDims
    clipped: bool


def extend_region(box: BoundingBox, frame: FrameDims) -> ExtendedRegion:
    """Enlarge a person box to also cover scooter pixels, then clip to the frame.

    The candidate rectangle is (x - w, y, 3w, h + h/4): the width grows by w on
    either side and the height by a quarter downward, while the top edge stays
    put. The result is the candidate intersected with the frame rectangle.

    Raises GeometryError if the source box does not intersect the frame or the
    clipped result is degenerate.
    """
    if box.x >= frame.width or box.right <= 0 or box.y >= frame.height or box.bottom <= 0:
        raise GeometryError(
            f"box ({box.x}, {box.y}, {box.w}, {box.h}) does not intersect "
            f"frame {frame.width}x{frame.height}"
        )

    cand_x = box.x - box.w
    cand_y = box.y
    cand_w = 3.0 * box.w
    cand_h = box.h + box.h / 4.0
    cand_right = cand_x + cand_w
    cand_bottom = cand_y + cand_h

    left = max(cand_x, 0.0)
    top = max(cand_y, 0.0)
    right = min(cand_right, float(frame.width))
    bottom = min(cand_bottom, float(frame.height))
    if right - left <= 0 or bottom - top <= 0:
        raise GeometryError(
            f"extended region of box ({box.x}, {box.y}, {box.w}, {box.h}) is degenerate "
            f"after clipping to frame {frame.width}x{frame.height}"
        )

    # Keep the candidate extents untouched when no edge clips, so the exact
    # 3w / 1.25h scaling survives floating point.
    h_clipped = left != cand_x or right != cand_right
    v_clipped = top != cand_y or bottom != cand_bottom
    result = BoundingBox(
        left,
        top,
        right - left if h_clipped else cand_w,
        bottom - top if v_clipped else cand_h,
    )
    return ExtendedRegion(box=result, source=box, frame=frame, clipped=h_clipped or v_clipped)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 1 iff identical, 0 iff disjoint.

    Areas use the same corner-difference arithmetic as the intersection so
    that identical boxes yield exactly 1.0.
    """
    inter_w = min(a.right, b.right) - max(a.x, b.x)
    inter_h = min(a.bottom, b.bottom) - max(a.y, b.y)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    area_a = (a.right - a.x) * (a.bottom - a.y)
    area_b = (b.right - b.x) * (b.bottom - b.y)
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)
