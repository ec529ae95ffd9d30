"""Turning one grounded object into supervised edit triplets.

The trick that makes supervision free: erase the object from the real image
and call the erased version the *source*.  The original image is then a
perfect *target* for the instruction "add that object", and we get one
triplet per fine caption of the object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from insertkit.backends.base import Eraser, Segmenter
from insertkit.core.geometry import BBox
from insertkit.core.image import RasterImage
from insertkit.core.mask import BinaryMask, composite_outside_mask, dilate_mask
from insertkit.errors import (
    BackendRejected,
    BackendUnavailable,
    InvalidArgument,
    SkipObject,
)

# Dilation widens the erase region so halos and soft shadows around the
# object are wiped too.  The reference amount is 10 px on a 512-long-side
# image, scaled proportionally for other sizes.
REFERENCE_DILATION_PX = 10
REFERENCE_LONG_SIDE = 512

DEFAULT_INSTRUCTION_TEMPLATE = "Add {caption}"

SKIP_EMPTY_MASK = "empty-mask"
SKIP_ERASE_FAILED = "erase-failed"


def default_dilation_radius(width: int, height: int) -> int:
    long_side = max(width, height)
    return max(1, round(REFERENCE_DILATION_PX * long_side / REFERENCE_LONG_SIDE))


@dataclass(frozen=True)
class Provenance:
    """How a triplet came to be: the raw draws behind its box and the
    backends that produced it."""

    boxes: tuple[tuple[float, float, float, float] | None, ...]
    ious: tuple[float, ...]
    backends: dict[str, str] = field(default_factory=dict)
    dilation_radius: int = 0

    def to_json(self) -> dict:
        return {
            "boxes": [list(b) if b is not None else None for b in self.boxes],
            "ious": list(self.ious),
            "backends": dict(self.backends),
            "dilation_radius": self.dilation_radius,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Provenance":
        return cls(
            boxes=tuple(tuple(b) if b is not None else None for b in doc.get("boxes", [])),
            ious=tuple(doc.get("ious", [])),
            backends=dict(doc.get("backends", {})),
            dilation_radius=int(doc.get("dilation_radius", 0)),
        )


@dataclass(frozen=True)
class EditTriplet:
    """One supervised insertion example.

    Invariants: source and target share dimensions; source equals target
    outside the mask; the instruction is nonempty.
    """

    source: RasterImage
    instruction: str
    target: RasterImage
    bbox: BBox
    mask: BinaryMask
    subject_id: str
    fine_caption: str
    fine_caption_index: int
    provenance: Provenance

    def __post_init__(self):
        if not self.instruction or not self.instruction.strip():
            raise InvalidArgument("triplet instruction must be nonempty")
        if (self.source.height, self.source.width) != (self.target.height, self.target.width):
            raise InvalidArgument("source and target dimensions must match")
        if (self.mask.height, self.mask.width) != (self.target.height, self.target.width):
            raise InvalidArgument("mask dimensions must match the images")


def render_instruction(template: str, caption: str) -> str:
    try:
        text = template.format(caption=caption)
    except (KeyError, IndexError) as exc:
        raise InvalidArgument(f"bad instruction template {template!r}: {exc}") from exc
    if not text.strip():
        raise InvalidArgument(f"instruction template {template!r} rendered empty text")
    return text


def build_triplets(
    image: RasterImage,
    subject_id: str,
    fine_captions: tuple[str, ...],
    box: BBox,
    segmenter: Segmenter,
    eraser: Eraser,
    *,
    dilation_radius: int | None = None,
    instruction_template: str = DEFAULT_INSTRUCTION_TEMPLATE,
    backend_ids: dict[str, str] | None = None,
    detection_boxes: tuple = (),
    detection_ious: tuple[float, ...] = (),
) -> list[EditTriplet]:
    """Segment, dilate, erase, composite; one triplet per fine caption.

    All returned triplets share the same source, target and mask.  Raises
    SkipObject("empty-mask") when segmentation finds nothing and
    SkipObject("erase-failed") when the eraser backend fails.
    """
    if not fine_captions:
        raise InvalidArgument(f"object {subject_id!r} has no fine captions")
    radius = (
        default_dilation_radius(image.width, image.height)
        if dilation_radius is None
        else dilation_radius
    )
    if radius < 0:
        raise InvalidArgument(f"dilation radius must be >= 0, got {radius}")

    raw_mask = segmenter.segment(image, box)
    if raw_mask.is_empty():
        raise SkipObject(SKIP_EMPTY_MASK, f"segmentation of {subject_id!r} is empty")
    mask = dilate_mask(raw_mask, radius)
    try:
        erased = eraser.erase(image, mask)
    except (BackendUnavailable, BackendRejected) as exc:
        raise SkipObject(SKIP_ERASE_FAILED, f"eraser failed for {subject_id!r}: {exc}") from exc
    if (erased.height, erased.width) != (image.height, image.width):
        raise SkipObject(SKIP_ERASE_FAILED, f"eraser changed dimensions for {subject_id!r}")
    # Guarantee the source is bit-identical to the target outside the mask,
    # no matter what the eraser did out there.
    source = composite_outside_mask(image, erased, mask)
    provenance = Provenance(
        boxes=tuple(b.as_tuple() if b is not None else None for b in detection_boxes),
        ious=tuple(detection_ious),
        backends=dict(backend_ids or {}),
        dilation_radius=radius,
    )
    return [
        EditTriplet(
            source=source,
            instruction=render_instruction(instruction_template, caption),
            target=image,
            bbox=box,
            mask=mask,
            subject_id=subject_id,
            fine_caption=caption,
            fine_caption_index=idx,
            provenance=provenance,
        )
        for idx, caption in enumerate(fine_captions)
    ]
