"""Normalized box geometry shared by detection, dataset generation and validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from insertkit.errors import InvalidArgument


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized image coordinates.

    Attributes:
        x0: Left edge, in [0, 1].
        y0: Top edge, in [0, 1].
        x1: Right edge, >= x0.
        y1: Bottom edge, >= y0.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(isinstance(c, (int, float)) for c in coords):
            raise InvalidArgument(f"box coordinates must be numbers: {coords!r}")
        if not (0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0):
            raise InvalidArgument(f"box must satisfy 0 <= min <= max <= 1: {coords!r}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def to_pixels(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Convert to integer pixel bounds (x0, y0, x1, y1), end-exclusive.

        The box is snapped outward so every partially covered pixel is
        included; result is clipped to the image.
        """
        import math

        if width < 1 or height < 1:
            raise InvalidArgument(f"image dimensions must be positive: {(width, height)}")
        px0 = max(0, min(width, math.floor(self.x0 * width)))
        py0 = max(0, min(height, math.floor(self.y0 * height)))
        px1 = max(px0, min(width, math.ceil(self.x1 * width)))
        py1 = max(py0, min(height, math.ceil(self.y1 * height)))
        return (px0, py0, px1, py1)

    @classmethod
    def from_thousandths(cls, coords: Sequence[float]) -> "BBox":
        """Build from the 0..999 integer convention used by grounding backends."""
        if len(coords) != 4:
            raise InvalidArgument(f"expected 4 coordinates, got {len(coords)}")
        vals = [min(1.0, max(0.0, float(c) / 999.0)) for c in coords]
        return cls(vals[0], vals[1], vals[2], vals[3])

    def to_thousandths(self) -> tuple[int, int, int, int]:
        return tuple(int(round(c * 999.0)) for c in self.as_tuple())


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Degenerate cases (zero-area union) return 0.0 rather than raising.
    """
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def mean_box(boxes: Iterable[BBox]) -> BBox:
    """Coordinate-wise mean of one or more boxes."""
    boxes = list(boxes)
    if not boxes:
        raise InvalidArgument("mean_box requires at least one box")
    n = len(boxes)
    return BBox(
        sum(b.x0 for b in boxes) / n,
        sum(b.y0 for b in boxes) / n,
        sum(b.x1 for b in boxes) / n,
        sum(b.y1 for b in boxes) / n,
    )
