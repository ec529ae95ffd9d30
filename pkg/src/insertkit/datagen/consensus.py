"""Rejection-sampled grounding consensus.

A single grounding draw is unreliable; we draw several boxes at nonzero
temperature and keep the object only when every draw found it and all draws
agree pairwise.  The accepted box is the coordinate-wise mean of the draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from insertkit.backends.base import GroundingDetector
from insertkit.core.geometry import BBox, iou, mean_box
from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument

REASON_SCATTERED = "scattered"
REASON_DETECTION_FAILED = "detection-failed"


@dataclass(frozen=True)
class ConsensusDetection:
    """Outcome of one consensus run, accepted or not.

    Attributes:
        box: Mean box when accepted, None otherwise.
        reason: None when accepted, else "detection-failed" (some draw found
            nothing) or "scattered" (draws disagree).
        draws: Every sampled box, in draw order; None entries are not-found.
        ious: Pairwise IoUs of the found draws, combinations in index order.
    """

    box: BBox | None
    reason: str | None
    draws: tuple[BBox | None, ...]
    ious: tuple[float, ...]

    @property
    def accepted(self) -> bool:
        return self.box is not None


def consensus_detect(
    image: RasterImage,
    phrase: str,
    detector: GroundingDetector,
    *,
    samples: int = 3,
    temperature: float = 0.2,
    iou_threshold: float = 0.8,
) -> ConsensusDetection:
    """Draw ``samples`` boxes and accept only unanimous, concentrated hits.

    Acceptance requires every draw to return a box and the minimum pairwise
    IoU to reach ``iou_threshold`` (a min exactly at the threshold is
    accepted).  All draws are always taken so the provenance is complete.
    """
    if samples < 2:
        raise InvalidArgument(f"consensus needs at least 2 samples, got {samples}")
    if not (0.0 < iou_threshold <= 1.0):
        raise InvalidArgument(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if temperature < 0.0:
        raise InvalidArgument(f"temperature must be >= 0, got {temperature}")

    draws = tuple(detector.locate(image, phrase, temperature) for _ in range(samples))
    found = [b for b in draws if b is not None]
    ious = tuple(iou(a, b) for a, b in combinations(found, 2))
    if len(found) < samples:
        return ConsensusDetection(None, REASON_DETECTION_FAILED, draws, ious)
    if any(v < iou_threshold for v in ious):
        return ConsensusDetection(None, REASON_SCATTERED, draws, ious)
    return ConsensusDetection(mean_box(found), None, draws, ious)
