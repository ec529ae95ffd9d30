"""The dataset factory: images in, supervised insertion triplets out.

For each input image: propose objects, ground each object by consensus,
segment + erase to synthesize the source, and emit one record per fine
caption.  Rejected objects land in a sidecar with their reason; a processed
set makes re-runs resume instead of redoing work.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from insertkit.backends.base import BackendSuite
from insertkit.core.image import RasterImage
from insertkit.datagen.consensus import consensus_detect
from insertkit.datagen.manifest import DatasetManifest, ManifestRecord
from insertkit.datagen.triplets import (
    DEFAULT_INSTRUCTION_TEMPLATE,
    EditTriplet,
    build_triplets,
)
from insertkit.errors import InvalidArgument, SkipObject

log = logging.getLogger(__name__)

REASON_TOO_LARGE = "too-large"
REASON_IMAGE_FAILED = "image-failed"

_INPUT_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one dataset build.

    Attributes:
        samples: Grounding draws per object.
        temperature: Grounding sampling temperature.
        iou_threshold: Pairwise IoU needed for consensus.
        dilation_radius: Mask dilation in px; None scales the 10px@512 default.
        instruction_template: Applied to each fine caption; "{caption}" slot.
        max_bbox_area: Objects with larger normalized box area are rejected.
        workers: Concurrent images in flight.
        seed: Recorded in meta for bookkeeping; backends own their own seeds.
    """

    samples: int = 3
    temperature: float = 0.2
    iou_threshold: float = 0.8
    dilation_radius: int | None = None
    instruction_template: str = DEFAULT_INSTRUCTION_TEMPLATE
    max_bbox_area: float = 0.6
    workers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.samples < 2:
            raise InvalidArgument(f"samples must be >= 2, got {self.samples}")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise InvalidArgument(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not (0.0 < self.max_bbox_area <= 1.0):
            raise InvalidArgument(f"max_bbox_area must be in (0, 1], got {self.max_bbox_area}")
        if self.workers < 1:
            raise InvalidArgument(f"workers must be >= 1, got {self.workers}")
        if self.dilation_radius is not None and self.dilation_radius < 0:
            raise InvalidArgument("dilation_radius must be >= 0")


@dataclass
class PipelineReport:
    """What one run did (excludes work skipped via the resume set)."""

    images_seen: int = 0
    images_processed: int = 0
    images_failed: int = 0
    records_written: int = 0
    objects_rejected: int = 0

    def to_json(self) -> dict:
        return {
            "images_seen": self.images_seen,
            "images_processed": self.images_processed,
            "images_failed": self.images_failed,
            "records_written": self.records_written,
            "objects_rejected": self.objects_rejected,
        }


def list_input_images(input_dir: str | Path) -> list[Path]:
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise InvalidArgument(f"input directory {input_dir} does not exist")
    return sorted(
        p for p in input_dir.iterdir() if p.suffix.lower() in _INPUT_SUFFIXES
    )


def run_pipeline(
    input_dir: str | Path,
    dataset_root: str | Path,
    backends: BackendSuite,
    config: PipelineConfig | None = None,
) -> PipelineReport:
    """Build (or extend) the dataset at ``dataset_root`` from a directory of
    images.  Idempotent: already-processed image ids are skipped, and a
    crashed run can simply be restarted."""
    config = config or PipelineConfig()
    manifest = DatasetManifest.create(dataset_root)
    manifest.write_meta(
        {
            "samples": config.samples,
            "temperature": config.temperature,
            "iou_threshold": config.iou_threshold,
            "dilation_radius": config.dilation_radius,
            "instruction_template": config.instruction_template,
            "max_bbox_area": config.max_bbox_area,
            "seed": config.seed,
            "backends": backends.identifiers(),
        }
    )
    report = PipelineReport()
    paths = list_input_images(input_dir)
    report.images_seen = len(paths)
    done = manifest.processed_ids()
    todo = [p for p in paths if p.stem not in done]

    def handle(path: Path) -> tuple[str, list[ManifestRecord], list[dict], Exception | None]:
        image_id = path.stem
        try:
            records, rejections = _process_image(image_id, path, manifest, backends, config)
            return image_id, records, rejections, None
        except Exception as exc:  # noqa: BLE001 - one bad image never kills the run
            return image_id, [], [], exc

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        for image_id, records, rejections, error in pool.map(handle, todo):
            if error is not None:
                log.warning("image %s failed: %s", image_id, error)
                manifest.append_rejection(
                    {"image_id": image_id, "reason": REASON_IMAGE_FAILED, "detail": str(error)}
                )
                report.images_failed += 1
                # not marked processed: a rerun gets another shot
                continue
            for row in rejections:
                manifest.append_rejection(row)
            report.objects_rejected += len(rejections)
            report.records_written += manifest.append_records(records)
            manifest.mark_processed(image_id)
            report.images_processed += 1
    return report


def _process_image(
    image_id: str,
    path: Path,
    manifest: DatasetManifest,
    backends: BackendSuite,
    config: PipelineConfig,
) -> tuple[list[ManifestRecord], list[dict]]:
    image = RasterImage.load(path)
    proposals = backends.captioner.describe(image)
    records: list[ManifestRecord] = []
    rejections: list[dict] = []
    for obj_index, proposal in enumerate(proposals):
        detection = consensus_detect(
            image,
            proposal.subject_id,
            backends.detector,
            samples=config.samples,
            temperature=config.temperature,
            iou_threshold=config.iou_threshold,
        )
        base_row = {
            "image_id": image_id,
            "subject_id": proposal.subject_id,
            "boxes": [list(b.as_tuple()) if b is not None else None for b in detection.draws],
            "ious": list(detection.ious),
        }
        if not detection.accepted:
            rejections.append({**base_row, "reason": detection.reason})
            continue
        if detection.box.area() > config.max_bbox_area:
            rejections.append(
                {**base_row, "reason": REASON_TOO_LARGE, "area": detection.box.area()}
            )
            continue
        try:
            triplets = build_triplets(
                image,
                proposal.subject_id,
                proposal.fine_captions,
                detection.box,
                backends.segmenter,
                backends.eraser,
                dilation_radius=config.dilation_radius,
                instruction_template=config.instruction_template,
                backend_ids=backends.identifiers(),
                detection_boxes=detection.draws,
                detection_ious=detection.ious,
            )
        except SkipObject as skip:
            rejections.append({**base_row, "reason": skip.reason, "detail": skip.detail})
            continue
        records.extend(_persist_triplets(manifest, image_id, obj_index, triplets))
    return records, rejections


def _persist_triplets(
    manifest: DatasetManifest,
    image_id: str,
    obj_index: int,
    triplets: list[EditTriplet],
) -> list[ManifestRecord]:
    """Write the shared images once and build one record per caption."""
    group = f"{image_id}_{obj_index:02d}"
    rel_src = f"{DatasetManifest.IMAGES}/{group}_src.png"
    rel_tgt = f"{DatasetManifest.IMAGES}/{group}_tgt.png"
    rel_mask = f"{DatasetManifest.IMAGES}/{group}_mask.png"
    first = triplets[0]
    first.source.save_png(manifest.root / rel_src)
    first.target.save_png(manifest.root / rel_tgt)
    first.mask.save_png(manifest.root / rel_mask)
    return [
        ManifestRecord(
            id=f"{group}_{t.fine_caption_index}",
            src=rel_src,
            tgt=rel_tgt,
            mask=rel_mask,
            instruction=t.instruction,
            subject_id=t.subject_id,
            fine_caption_index=t.fine_caption_index,
            bbox=t.bbox.as_tuple(),
            provenance=t.provenance,
            width=t.target.width,
            height=t.target.height,
        )
        for t in triplets
    ]


def expected_record_count(
    num_images: int, objects_per_image: int, captions_per_object: int
) -> int:
    """Record count when every object survives consensus and segmentation."""
    return num_images * objects_per_image * captions_per_object
