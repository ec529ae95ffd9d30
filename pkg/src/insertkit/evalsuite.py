"""Quantitative evaluation of insertion models.

Two image/text alignment metrics over a benchmark of (image, instruction,
caption-before, caption-after) records, plus pairwise win-rate aggregation
for human preference data.

  clip_out  cosine(edited image embedding, output caption embedding),
            both unit-normalized
  clip_dir  cosine(Δimage, Δcaption) where Δimage = embed(edited) −
            embed(input) and Δcaption = embed(output) − embed(input); a
            delta with norm < 1e-8 makes the score 0.0 rather than an
            error, because identical images are a legitimate outcome of a
            failed edit.

Cosine normalizes its operands, so both metrics are invariant to uniform
positive rescaling of raw embedder outputs and live in [-1, 1].
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from insertkit.backends.base import Embedder, Generator
from insertkit.compose import clip_score
from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument
from insertkit.seeds import derive_seed

DEGENERATE_DELTA_NORM = 1e-8


@dataclass(frozen=True)
class BenchmarkRecord:
    """One evaluation case: edit ``input_image`` per ``instruction``; the
    captions describe the scene before and after the intended edit."""

    id: str
    input_image: str  # path, resolved relative to the benchmark file
    instruction: str
    input_caption: str
    output_caption: str

    def __post_init__(self):
        for name in ("id", "input_image", "instruction", "input_caption", "output_caption"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise InvalidArgument(f"BenchmarkRecord.{name} must be a nonempty string")


@dataclass(frozen=True)
class PreferenceRecord:
    """One pairwise human judgment between two model identifiers."""

    record_id: str
    model_a: str
    model_b: str
    winner: str  # "a" | "b"

    def __post_init__(self):
        if self.model_a == self.model_b:
            raise InvalidArgument("model_a and model_b must differ")
        if self.winner not in ("a", "b"):
            raise InvalidArgument(f'winner must be "a" or "b", got {self.winner!r}')


@dataclass(frozen=True)
class RecordResult:
    id: str
    clip_out: float | None
    clip_dir: float | None
    failed: bool = False
    error: str = ""


@dataclass
class MetricsReport:
    model: str
    seed: int
    records: list[RecordResult] = field(default_factory=list)
    clip_out_mean: float | None = None
    clip_dir_mean: float | None = None
    evaluated: int = 0
    failed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "seed": self.seed,
            "evaluated": self.evaluated,
            "failed": self.failed,
            "clip_out_mean": self.clip_out_mean,
            "clip_dir_mean": self.clip_dir_mean,
            "records": [
                {
                    "id": r.id,
                    "clip_out": r.clip_out,
                    "clip_dir": r.clip_dir,
                    "failed": r.failed,
                    "error": r.error,
                }
                for r in self.records
            ],
        }


def clip_out(edited_image: RasterImage, output_caption: str, embedder: Embedder) -> float:
    """Cosine similarity of the edited image and the output caption."""
    return clip_score(edited_image, output_caption, embedder)


def clip_dir(
    input_image: RasterImage,
    edited_image: RasterImage,
    input_caption: str,
    output_caption: str,
    embedder: Embedder,
) -> float:
    """Directional similarity: how well the image change tracks the caption
    change.  If either delta is (near-)zero the edit direction is undefined
    and the score is 0.0."""
    delta_img = np.asarray(embedder.embed_image(edited_image), dtype=np.float64) - np.asarray(
        embedder.embed_image(input_image), dtype=np.float64
    )
    delta_txt = np.asarray(embedder.embed_text(output_caption), dtype=np.float64) - np.asarray(
        embedder.embed_text(input_caption), dtype=np.float64
    )
    norm_img = float(np.linalg.norm(delta_img))
    norm_txt = float(np.linalg.norm(delta_txt))
    if norm_img < DEGENERATE_DELTA_NORM or norm_txt < DEGENERATE_DELTA_NORM:
        return 0.0
    return float(np.dot(delta_img / norm_img, delta_txt / norm_txt))


def load_benchmark(path: str | Path) -> list[BenchmarkRecord]:
    """Reads benchmark records from a JSONL file.  Relative ``input_image``
    paths are resolved against the file's directory."""
    path = Path(path)
    root = path.parent
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidArgument(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            try:
                image_path = doc["input_image"]
                if not Path(image_path).is_absolute():
                    image_path = str(root / image_path)
                records.append(
                    BenchmarkRecord(
                        id=str(doc["id"]),
                        input_image=image_path,
                        instruction=doc["instruction"],
                        input_caption=doc["input_caption"],
                        output_caption=doc["output_caption"],
                    )
                )
            except KeyError as exc:
                raise InvalidArgument(f"{path}:{line_no}: missing field {exc}") from exc
    return records


def _evaluate_one(
    record: BenchmarkRecord, generator: Generator, embedder: Embedder, seed: int
) -> RecordResult:
    try:
        image = RasterImage.load(record.input_image)
        edited = generator.edit(
            image, record.instruction, 1, derive_seed(seed, "eval", record.id)
        )[0]
        return RecordResult(
            id=record.id,
            clip_out=clip_out(edited, record.output_caption, embedder),
            clip_dir=clip_dir(
                image, edited, record.input_caption, record.output_caption, embedder
            ),
        )
    except Exception as exc:  # per-record failures must not sink the run
        return RecordResult(
            id=record.id, clip_out=None, clip_dir=None, failed=True, error=str(exc)
        )


def evaluate_benchmark(
    records: list[BenchmarkRecord],
    generator: Generator,
    embedder: Embedder,
    seed: int = 0,
    workers: int = 4,
) -> MetricsReport:
    """Runs the generator over every record and aggregates both metrics.

    Each record gets a seed derived from (seed, record id), so results are
    deterministic and independent of evaluation order.  Failed records are
    excluded from the aggregate means but counted in the report.
    """
    if not records:
        raise InvalidArgument("records must be nonempty")
    if workers < 1:
        raise InvalidArgument(f"workers must be >= 1, got {workers}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda r: _evaluate_one(r, generator, embedder, seed), records)
        )

    ok = [r for r in results if not r.failed]
    report = MetricsReport(
        model=getattr(generator, "identifier", type(generator).__name__),
        seed=seed,
        records=results,
        evaluated=len(ok),
        failed=len(results) - len(ok),
    )
    if ok:
        report.clip_out_mean = float(np.mean([r.clip_out for r in ok]))
        report.clip_dir_mean = float(np.mean([r.clip_dir for r in ok]))
    return report


def write_report(report: MetricsReport, out_dir: str | Path) -> Path:
    """Writes report.json plus a CSV twin with one row per record and a
    final aggregate row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(report.to_json_dict(), indent=2), encoding="utf-8"
    )

    csv_path = out_dir / "report.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "status", "clip_out", "clip_dir", "error"])
        for r in report.records:
            writer.writerow(
                [
                    r.id,
                    "failed" if r.failed else "ok",
                    "" if r.clip_out is None else repr(r.clip_out),
                    "" if r.clip_dir is None else repr(r.clip_dir),
                    r.error,
                ]
            )
        writer.writerow(
            [
                "aggregate",
                f"{report.evaluated} ok / {report.failed} failed",
                "" if report.clip_out_mean is None else repr(report.clip_out_mean),
                "" if report.clip_dir_mean is None else repr(report.clip_dir_mean),
                "",
            ]
        )
    return json_path


def win_rate(prefs: list[PreferenceRecord]) -> dict[str, float]:
    """Per-model win percentage over the comparisons it participated in,
    rounded to two decimals."""
    if not prefs:
        raise InvalidArgument("prefs must be nonempty")
    wins: dict[str, int] = {}
    games: dict[str, int] = {}
    for pref in prefs:
        winner = pref.model_a if pref.winner == "a" else pref.model_b
        for model in (pref.model_a, pref.model_b):
            games[model] = games.get(model, 0) + 1
            wins.setdefault(model, 0)
        wins[winner] += 1
    return {
        model: round(wins[model] / games[model] * 100.0, 2)
        for model in sorted(games)
    }
