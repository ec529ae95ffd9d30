"""Dataset integrity checks.

A valid record decodes, its three files agree on dimensions, source equals
target outside the mask bit-exactly, the mask stays inside the (dilated)
box, and the instruction is nonempty.  Violations are collected, not
raised, so one bad record never hides the rest.
"""

from __future__ import annotations

import numpy as np

from insertkit.core.geometry import BBox
from insertkit.core.image import RasterImage
from insertkit.core.mask import BinaryMask
from insertkit.datagen.manifest import DatasetManifest, ManifestRecord
from insertkit.datagen.triplets import default_dilation_radius
from insertkit.errors import InvalidArgument

from dataclasses import dataclass, field

# Extra slack on top of the dilation radius when checking mask-in-box:
# boxes are stored normalized and pixel snapping can add up to a pixel on
# each side, plus one more for antialiased segmenters.
BOX_MARGIN_EXTRA_PX = 2


@dataclass(frozen=True)
class Violation:
    record_id: str
    kind: str
    detail: str = ""


@dataclass
class ValidationReport:
    checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "checked": self.checked,
            "ok": self.ok,
            "violations": [
                {"record_id": v.record_id, "kind": v.kind, "detail": v.detail}
                for v in self.violations
            ],
        }


def validate_dataset(manifest: DatasetManifest) -> ValidationReport:
    report = ValidationReport()
    seen_ids: set[str] = set()
    for record in manifest.records():
        report.checked += 1
        if record.id in seen_ids:
            report.violations.append(Violation(record.id, "duplicate-id"))
            continue
        seen_ids.add(record.id)
        report.violations.extend(_check_record(manifest, record))
    return report


def _check_record(manifest: DatasetManifest, record: ManifestRecord) -> list[Violation]:
    out: list[Violation] = []
    if not record.instruction.strip():
        out.append(Violation(record.id, "empty-instruction"))
    try:
        src = RasterImage.load(manifest.root / record.src)
        tgt = RasterImage.load(manifest.root / record.tgt)
        mask = BinaryMask.load(manifest.root / record.mask)
    except (InvalidArgument, OSError) as exc:
        out.append(Violation(record.id, "decode-failed", str(exc)))
        return out

    dims = {(src.height, src.width), (tgt.height, tgt.width), (mask.height, mask.width)}
    if len(dims) != 1 or (tgt.height, tgt.width) != (record.height, record.width):
        out.append(
            Violation(
                record.id,
                "dimension-mismatch",
                f"src/tgt/mask/manifest dims: {(src.height, src.width)} "
                f"{(tgt.height, tgt.width)} {(mask.height, mask.width)} "
                f"{(record.height, record.width)}",
            )
        )
        return out

    if src.channels == tgt.channels:
        outside = ~mask.bits
        if not np.array_equal(src.to_uint8()[outside], tgt.to_uint8()[outside]):
            bad = int((src.to_uint8() != tgt.to_uint8()).any(axis=2)[outside].sum())
            out.append(
                Violation(record.id, "outside-mask-mismatch", f"{bad} differing pixels")
            )
    else:
        out.append(
            Violation(
                record.id,
                "dimension-mismatch",
                f"channel counts differ: {src.channels} vs {tgt.channels}",
            )
        )

    out.extend(_check_mask_in_box(record, mask))
    return out


def _check_mask_in_box(record: ManifestRecord, mask: BinaryMask) -> list[Violation]:
    radius = record.provenance.dilation_radius
    if radius <= 0:
        radius = default_dilation_radius(record.width, record.height)
    margin = radius + BOX_MARGIN_EXTRA_PX
    try:
        box = BBox(*record.bbox)
    except InvalidArgument as exc:
        return [Violation(record.id, "bad-bbox", str(exc))]
    px0, py0, px1, py1 = box.to_pixels(record.width, record.height)
    px0 = max(0, px0 - margin)
    py0 = max(0, py0 - margin)
    px1 = min(record.width, px1 + margin)
    py1 = min(record.height, py1 + margin)
    outside = mask.bits.copy()
    outside[py0:py1, px0:px1] = False
    stray = int(outside.sum())
    if stray:
        return [
            Violation(
                record.id,
                "mask-outside-bbox",
                f"{stray} mask pixels beyond the dilated box",
            )
        ]
    return []
