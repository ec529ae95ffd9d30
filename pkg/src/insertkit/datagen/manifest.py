"""On-disk dataset layout.

    <root>/
      images/{record_group}_src.png   shared by all captions of one object
      images/{record_group}_tgt.png
      images/{record_group}_mask.png
      manifest.jsonl                  one record per (object, caption)
      rejections.jsonl                sidecar of rejected objects
      processed.txt                   image ids already handled (resume set)
      meta.json                       pipeline settings the data was built with

Appends are line-buffered JSONL guarded by a lock, and records are
deduplicated by id on write, which makes interrupted runs safe to repeat.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from insertkit.datagen.triplets import Provenance
from insertkit.errors import InvalidArgument


@dataclass(frozen=True)
class ManifestRecord:
    """One manifest row; paths are relative to the dataset root."""

    id: str
    src: str
    tgt: str
    mask: str
    instruction: str
    subject_id: str
    fine_caption_index: int
    bbox: tuple[float, float, float, float]
    provenance: Provenance
    width: int
    height: int

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "src": self.src,
            "tgt": self.tgt,
            "mask": self.mask,
            "instruction": self.instruction,
            "subject_id": self.subject_id,
            "fine_caption_index": self.fine_caption_index,
            "bbox": list(self.bbox),
            "provenance": self.provenance.to_json(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ManifestRecord":
        try:
            return cls(
                id=doc["id"],
                src=doc["src"],
                tgt=doc["tgt"],
                mask=doc["mask"],
                instruction=doc["instruction"],
                subject_id=doc["subject_id"],
                fine_caption_index=int(doc["fine_caption_index"]),
                bbox=tuple(float(v) for v in doc["bbox"]),
                provenance=Provenance.from_json(doc.get("provenance", {})),
                width=int(doc["width"]),
                height=int(doc["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed manifest record: {exc}") from exc


@dataclass
class DatasetManifest:
    root: Path
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _known_ids: set[str] = field(default_factory=set, repr=False)

    MANIFEST = "manifest.jsonl"
    REJECTIONS = "rejections.jsonl"
    PROCESSED = "processed.txt"
    META = "meta.json"
    IMAGES = "images"

    def __post_init__(self):
        self.root = Path(self.root)
        self._known_ids = {r.id for r in self.records()} if self.manifest_path.exists() else set()

    @classmethod
    def create(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        (root / cls.IMAGES).mkdir(parents=True, exist_ok=True)
        m = cls(root)
        for name in (cls.MANIFEST, cls.REJECTIONS, cls.PROCESSED):
            (root / name).touch()
        return m

    @classmethod
    def open(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        if not (root / cls.MANIFEST).exists():
            raise InvalidArgument(f"no dataset manifest under {root}")
        return cls(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST

    @property
    def images_dir(self) -> Path:
        return self.root / self.IMAGES

    def records(self) -> Iterator[ManifestRecord]:
        if not self.manifest_path.exists():
            return
        with self.manifest_path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InvalidArgument(
                        f"manifest line {line_no} is not valid JSON: {exc}"
                    ) from exc
                yield ManifestRecord.from_json(doc)

    def count(self) -> int:
        return sum(1 for _ in self.records())

    def known_ids(self) -> set[str]:
        with self._lock:
            return set(self._known_ids)

    def append_records(self, records: list[ManifestRecord]) -> int:
        """Append records, skipping ids already present.  Returns how many
        were actually written."""
        written = 0
        with self._lock:
            fresh = [r for r in records if r.id not in self._known_ids]
            if fresh:
                with self.manifest_path.open("a", encoding="utf-8") as fh:
                    for rec in fresh:
                        fh.write(json.dumps(rec.to_json()) + "\n")
                    fh.flush()
                self._known_ids.update(r.id for r in fresh)
                written = len(fresh)
        return written

    def append_rejection(self, row: dict) -> None:
        with self._lock:
            with (self.root / self.REJECTIONS).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")

    def rejections(self) -> list[dict]:
        path = self.root / self.REJECTIONS
        if not path.exists():
            return []
        out = []
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def processed_ids(self) -> set[str]:
        path = self.root / self.PROCESSED
        if not path.exists():
            return set()
        with path.open("r", encoding="utf-8") as fh:
            return {line.strip() for line in fh if line.strip()}

    def mark_processed(self, image_id: str) -> None:
        with self._lock:
            with (self.root / self.PROCESSED).open("a", encoding="utf-8") as fh:
                fh.write(image_id + "\n")
                fh.flush()

    def write_meta(self, meta: dict) -> None:
        with self._lock:
            (self.root / self.META).write_text(
                json.dumps(meta, indent=2), encoding="utf-8"
            )

    def read_meta(self) -> dict:
        path = self.root / self.META
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))
