"""Desk-scale end-to-end insertion experiment.

Builds a closed shape world whose training instructions cover only a chosen
subset of the (color, shape, cell) product, runs the full dataset factory
over it, trains the toy denoiser, and scores sampled insertions for held-out
prompts with an analytic color-blob oracle:

    world   = build_insertion_world(...)      # scenario + held-out prompts
    report  = run_toy_insertion_experiment(ToyExperimentConfig(), workdir)
    report.eval.success_rate, report.eval.mean_background_mae

The oracle judges one edit by diffing it against its source: the largest
connected changed region is "the insertion"; success requires its mean color
to classify (nearest palette entry) as the requested color and the pixels
outside it to stay within a mean-absolute-error budget of the source.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from insertkit.backends.base import Generator
from insertkit.backends.mock import (
    COLOR_PALETTE,
    GRID_CELLS,
    SHAPE_NAMES,
    MockScenario,
    SceneObject,
    SceneSpec,
    cell_center,
    mock_suite,
    render_scene,
)
from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument
from insertkit.seeds import derive_seed

Triple = tuple[str, str, str]  # (color, shape, cell)

INSTRUCTION_FORM = "Add a {color} {shape} in the {cell}"

# Blob geometry.  Cell centers sit 1/3 apart; with per-axis center jitter of
# ±_CENTER_JITTER and radii up to _BLOB_RADIUS[1], two objects in adjacent
# cells keep an edge gap of at least 1/3 - 2*(0.135 + 0.01) = 0.043 (2.7px at
# 64px), so the one-pixel dilation applied to erase masks can never clip a
# neighboring object.
_BLOB_RADIUS = (0.10, 0.135)
_CENTER_JITTER = 0.01


def all_triples() -> list[Triple]:
    """The full (color, shape, cell) product, in deterministic order."""
    return [
        (color, shape, cell)
        for color, shape, cell in itertools.product(
            COLOR_PALETTE, SHAPE_NAMES, GRID_CELLS
        )
    ]


def instruction_for(triple: Triple) -> str:
    color, shape, cell = triple
    return INSTRUCTION_FORM.format(color=color, shape=shape, cell=cell)


@dataclass(frozen=True)
class HeldoutPrompt:
    color: str
    shape: str
    cell: str
    instruction: str


@dataclass
class InsertionWorld:
    """A train/held-out split over the (color, shape, cell) product."""

    scenario: MockScenario
    train_triples: tuple[Triple, ...]
    heldout_prompts: tuple[HeldoutPrompt, ...]

    @property
    def background_image(self) -> RasterImage:
        """The bare canvas every held-out edit starts from.

        Rendered through the same path as the training scenes so its pixel
        values match the erased training sources bit for bit (uint8
        quantization included)."""
        first = self.scenario.scenes[0]
        return render_scene(
            SceneSpec("background", first.width, first.height, ()),
            self.scenario.background,
        )


def _coverage_fix(
    chosen: list[Triple], pool: list[Triple], rng: np.random.Generator
) -> list[Triple]:
    """Swap triples in so every color, shape, and cell occurs at least once."""
    chosen = list(chosen)
    for axis, values in ((0, COLOR_PALETTE), (1, SHAPE_NAMES), (2, GRID_CELLS)):
        for value in values:
            if any(t[axis] == value for t in chosen):
                continue
            candidates = [t for t in pool if t[axis] == value and t not in chosen]
            replaceable = [
                i for i, t in enumerate(chosen)
                if sum(1 for u in chosen if u[0] == t[0]) > 1
                and sum(1 for u in chosen if u[1] == t[1]) > 1
                and sum(1 for u in chosen if u[2] == t[2]) > 1
            ]
            if not candidates or not replaceable:
                raise InvalidArgument("cannot cover every factor with this split size")
            chosen[replaceable[int(rng.integers(len(replaceable)))]] = candidates[
                int(rng.integers(len(candidates)))
            ]
    return chosen


def build_insertion_world(
    *,
    train_triples: int = 54,
    heldout_prompts: int = 100,
    images: int = 500,
    decoy_layouts: int = 9,
    empty_every: int = 3,
    size: int = 64,
    seed: int = 0,
    name: str = "insertion-world",
) -> InsertionWorld:
    """Splits the 162-triple product into training scenes and held-out prompts.

    Training scenes only ever show objects from the training split, so every
    held-out instruction string is absent from the dataset; generalizing to
    them requires composing color, shape, and position factors.  Every
    individual color, shape, and cell does appear in training.

    Scene backgrounds are deliberately uninformative about the requested
    edit.  Scenes cycle through a small set of layouts: an empty canvas
    (every ``empty_every``-th scene) and ``decoy_layouts`` canvases that each
    hold one fixed extra object.  Erasing a target thus yields the same
    source image under many different instructions — and erasing a decoy
    yields many different source images under the same instruction — so the
    instruction text is the only signal that predicts the edit.  The empty
    layout also puts the bare evaluation canvas itself in the training
    distribution.
    """
    universe = all_triples()
    if train_triples + heldout_prompts > len(universe):
        raise InvalidArgument(
            f"split needs {train_triples}+{heldout_prompts} triples; "
            f"only {len(universe)} exist"
        )
    if not 1 <= decoy_layouts <= len(GRID_CELLS):
        raise InvalidArgument(
            f"decoy layouts must be in [1, {len(GRID_CELLS)}], got {decoy_layouts}"
        )
    if empty_every < 1:
        raise InvalidArgument(f"empty_every must be >= 1, got {empty_every}")

    rng = np.random.default_rng(derive_seed(seed, "insertion-world", name))
    order = [universe[i] for i in rng.permutation(len(universe))]
    train = _coverage_fix(order[:train_triples], order, rng)
    heldout = [t for t in order if t not in train][:heldout_prompts]

    def make_object(triple: Triple) -> SceneObject:
        color, shape, cell = triple
        cx, cy = cell_center(cell)
        return SceneObject(
            color=color,
            shape=shape,
            cell=cell,
            cx=cx + rng.uniform(-_CENTER_JITTER, _CENTER_JITTER),
            cy=cy + rng.uniform(-_CENTER_JITTER, _CENTER_JITTER),
            radius=rng.uniform(*_BLOB_RADIUS),
        )

    # One fixed decoy object per layout, anchored to distinct cells.  Reusing
    # the exact SceneObject instance means every source image obtained by
    # erasing a target collapses to the identical per-layout canvas.
    decoys = []
    for cell in GRID_CELLS[:decoy_layouts]:
        pool = [t for t in train if t[2] == cell]
        decoys.append(make_object(pool[int(rng.integers(len(pool)))]))

    scenes = []
    decoy_scene_count = 0
    for idx in range(images):
        if idx % empty_every == 0:
            decoy = None
        else:
            decoy = decoys[decoy_scene_count % len(decoys)]
            decoy_scene_count += 1
        # Distinct cells keep placements unambiguous; distinct labels keep
        # the captioner's identifying phrases unique within a scene.
        while True:
            color, shape, cell = train[int(rng.integers(len(train)))]
            if decoy is None:
                break
            if cell != decoy.cell and (color, shape) != (decoy.color, decoy.shape):
                break
        target = make_object((color, shape, cell))
        objects = (target,) if decoy is None else (decoy, target)
        scenes.append(SceneSpec(f"img{idx:04d}", size, size, objects))

    scenario = MockScenario(
        name=name,
        scenes=tuple(scenes),
        captions_per_object=1,
        seed=seed,
    )
    prompts = tuple(
        HeldoutPrompt(color, shape, cell, instruction_for((color, shape, cell)))
        for color, shape, cell in heldout
    )
    return InsertionWorld(
        scenario=scenario,
        train_triples=tuple(train),
        heldout_prompts=prompts,
    )


# -- color-blob oracle -------------------------------------------------------


@dataclass(frozen=True)
class OracleVerdict:
    success: bool
    reason: str  # "ok" | "no-insertion" | "wrong-color" | "background-drift"
    blob_color: str | None
    blob_area: int
    background_mae: float

    def to_json_dict(self) -> dict:
        return {
            "success": self.success,
            "reason": self.reason,
            "blob_color": self.blob_color,
            "blob_area": self.blob_area,
            "background_mae": self.background_mae,
        }


def _nearest_palette_color(rgb: np.ndarray) -> str:
    best, best_d = None, np.inf
    for name, ref in COLOR_PALETTE.items():
        d = float(np.sum((rgb - np.asarray(ref)) ** 2))
        if d < best_d:
            best, best_d = name, d
    return best


def blob_oracle(
    source: RasterImage,
    edited: RasterImage,
    color: str,
    *,
    change_threshold: float = 0.08,
    min_area: int = 16,
    edge_margin: int = 2,
    mae_limit: float = 0.05,
) -> OracleVerdict:
    """Judges one insertion analytically.

    The largest connected region whose pixels moved more than
    ``change_threshold`` (max over channels) is taken as the inserted blob.
    Success requires (a) the blob exists with at least ``min_area`` pixels,
    (b) its mean color classifies as ``color`` against the palette, and
    (c) pixels outside the blob (dilated by ``edge_margin`` to forgive soft
    edges) match the source within ``mae_limit`` mean absolute error.
    """
    if color not in COLOR_PALETTE:
        raise InvalidArgument(f"unknown palette color {color!r}")
    if source.size != edited.size:
        raise InvalidArgument("source and edited images must share dimensions")
    src = source.data.astype(np.float64)
    out = edited.data.astype(np.float64)
    if src.shape[2] != out.shape[2]:
        raise InvalidArgument("source and edited images must share channel count")

    diff = np.abs(out - src).max(axis=2)
    changed = diff > change_threshold
    labels, count = ndimage.label(changed)
    if count == 0:
        return OracleVerdict(False, "no-insertion", None, 0, 0.0)
    areas = ndimage.sum_labels(changed, labels, index=np.arange(1, count + 1))
    blob_index = int(np.argmax(areas)) + 1
    blob = labels == blob_index
    blob_area = int(areas[blob_index - 1])
    if blob_area < min_area:
        return OracleVerdict(False, "no-insertion", None, blob_area, 0.0)

    mean_rgb = out[blob].mean(axis=0)[:3]
    found = _nearest_palette_color(mean_rgb)

    region = ndimage.binary_dilation(blob, iterations=edge_margin)
    outside = ~region
    background_mae = float(np.abs(out - src)[outside].mean()) if outside.any() else 0.0

    if found != color:
        return OracleVerdict(False, "wrong-color", found, blob_area, background_mae)
    if background_mae > mae_limit:
        return OracleVerdict(
            False, "background-drift", found, blob_area, background_mae
        )
    return OracleVerdict(True, "ok", found, blob_area, background_mae)


@dataclass
class InsertionEvalReport:
    total: int
    successes: int
    success_rate: float
    mean_background_mae: float
    verdicts: list[OracleVerdict] = field(repr=False, default_factory=list)
    failure_counts: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_background_mae": self.mean_background_mae,
            "failure_counts": self.failure_counts,
            "verdicts": [v.to_json_dict() for v in self.verdicts],
        }


def evaluate_insertions(
    generator: Generator,
    prompts: tuple[HeldoutPrompt, ...] | list[HeldoutPrompt],
    background: RasterImage,
    *,
    seed: int = 0,
    mae_limit: float = 0.05,
    out_dir: str | Path | None = None,
) -> InsertionEvalReport:
    """Runs one edit per prompt against ``background`` and scores each with
    the blob oracle.  Per-prompt seeds derive from (seed, index) so the set
    is reproducible and order-independent of wall clock."""
    if not prompts:
        raise InvalidArgument("prompts must be nonempty")
    verdicts = []
    failures: dict[str, int] = {}
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for i, prompt in enumerate(prompts):
        edited = generator.edit(
            background, prompt.instruction, 1, derive_seed(seed, "e2e", i)
        )[0]
        verdict = blob_oracle(background, edited, prompt.color, mae_limit=mae_limit)
        verdicts.append(verdict)
        if not verdict.success:
            failures[verdict.reason] = failures.get(verdict.reason, 0) + 1
        if out_path is not None:
            edited.save_png(out_path / f"prompt_{i:03d}_{verdict.reason}.png")
    successes = sum(v.success for v in verdicts)
    return InsertionEvalReport(
        total=len(verdicts),
        successes=successes,
        success_rate=successes / len(verdicts),
        mean_background_mae=float(np.mean([v.background_mae for v in verdicts])),
        verdicts=verdicts,
        failure_counts=failures,
    )


# -- full experiment ---------------------------------------------------------


@dataclass
class ToyExperimentConfig:
    """Frozen desk-scale recipe: dataset -> train -> held-out evaluation."""

    # world
    train_triples: int = 54
    heldout_prompts: int = 100
    images: int = 500
    decoy_layouts: int = 9
    empty_every: int = 3
    size: int = 64
    # model
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    time_dim: int = 64
    # training
    steps: int = 1500
    micro_batch: int = 8
    grad_accum: int = 2
    learning_rate: float = 2e-4
    # sampling
    sample_steps: int = 18
    image_guidance: float = 1.5
    text_guidance: float = 3.0
    # shared
    seed: int = 0

    def to_json_dict(self) -> dict:
        doc = dict(self.__dict__)
        doc["channel_mults"] = list(self.channel_mults)
        return doc


@dataclass
class ToyExperimentReport:
    config: ToyExperimentConfig
    records_written: int
    first_losses_mean: float
    last_losses_mean: float
    train_seconds: float
    eval: InsertionEvalReport
    checkpoint: str

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "records_written": self.records_written,
            "first_losses_mean": self.first_losses_mean,
            "last_losses_mean": self.last_losses_mean,
            "train_seconds": self.train_seconds,
            "eval": self.eval.to_json_dict(),
            "checkpoint": self.checkpoint,
        }


def run_toy_insertion_experiment(
    config: ToyExperimentConfig,
    workdir: str | Path,
    *,
    save_samples: bool = False,
) -> ToyExperimentReport:
    """Dataset factory -> trainer -> held-out oracle evaluation, end to end."""
    import torch

    from insertkit.datagen.manifest import DatasetManifest
    from insertkit.datagen.pipeline import PipelineConfig, run_pipeline
    from insertkit.diffusion import (
        CenteredCodec,
        DenoiserConfig,
        DiffusionGenerator,
        SamplerConfig,
        ToyDenoiser,
        TrainConfig,
        WordSequenceEncoder,
        load_training_examples,
        make_schedule,
        train,
    )

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    world = build_insertion_world(
        train_triples=config.train_triples,
        heldout_prompts=config.heldout_prompts,
        images=config.images,
        decoy_layouts=config.decoy_layouts,
        empty_every=config.empty_every,
        size=config.size,
        seed=config.seed,
    )
    suite = mock_suite(world.scenario)
    suite.write_inputs(workdir / "inputs")
    pipeline_report = run_pipeline(
        workdir / "inputs",
        workdir / "dataset",
        suite,
        PipelineConfig(seed=config.seed),
    )

    encoder = WordSequenceEncoder(suite.embedder)
    torch.manual_seed(derive_seed(config.seed, "e2e-init"))
    model = ToyDenoiser(
        DenoiserConfig(
            latent_channels=3,
            base_channels=config.base_channels,
            channel_mults=config.channel_mults,
            text_dim=encoder.dim,
            time_dim=config.time_dim,
        )
    )
    schedule = make_schedule()
    # Zero-mean latents: doubles signal amplitude against unit sampling noise,
    # which is what lets the text pathway train within the desk-scale budget.
    codec = CenteredCodec()
    examples = load_training_examples(
        DatasetManifest.open(workdir / "dataset"), codec, encoder
    )
    started = time.monotonic()
    result = train(
        examples,
        model,
        schedule,
        codec,
        TrainConfig(
            steps=config.steps,
            micro_batch=config.micro_batch,
            grad_accum=config.grad_accum,
            learning_rate=config.learning_rate,
            seed=config.seed,
            checkpoint_every=max(1, config.steps // 2),
        ),
        workdir / "runs",
    )
    train_seconds = time.monotonic() - started

    generator = DiffusionGenerator.from_checkpoint(
        result.final_checkpoint,
        suite.embedder,
        sampler=SamplerConfig(
            steps=config.sample_steps,
            image_guidance=config.image_guidance,
            text_guidance=config.text_guidance,
        ),
    )
    eval_report = evaluate_insertions(
        generator,
        world.heldout_prompts,
        world.background_image,
        seed=config.seed,
        out_dir=(workdir / "samples") if save_samples else None,
    )

    window = min(50, max(1, len(result.losses) // 2))
    report = ToyExperimentReport(
        config=config,
        records_written=pipeline_report.records_written,
        first_losses_mean=float(np.mean(result.losses[:window])),
        last_losses_mean=float(np.mean(result.losses[-window:])),
        train_seconds=train_seconds,
        eval=eval_report,
        checkpoint=str(result.final_checkpoint),
    )
    (workdir / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2), encoding="utf-8"
    )
    return report
