"""Desk-scale training loop: AdamW with gradient accumulation.

Effective batch = micro_batch x grad_accum.  Every optimizer step appends a
row to loss_log.csv (step, loss, lr, wall_seconds); checkpoints are written
atomically every `checkpoint_every` steps and at the end.  A non-finite loss
aborts the run after saving the last finite parameter state, so a crashed
run always leaves a usable checkpoint behind.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from insertkit.core.image import RasterImage
from insertkit.datagen.manifest import DatasetManifest
from insertkit.diffusion.codec import LatentCodec
from insertkit.diffusion.conditioning import WordSequenceEncoder, pad_text_batch
from insertkit.diffusion.checkpoint import save_checkpoint
from insertkit.diffusion.loss import sample_loss_draws, training_loss
from insertkit.diffusion.schedule import NoiseSchedule
from insertkit.diffusion.unet import ToyDenoiser
from insertkit.errors import InvalidArgument, NumericalDivergence


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    micro_batch: int = 4
    grad_accum: int = 384
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    drop_probs: tuple[float, float, float] = (0.05, 0.05, 0.05)
    seed: int = 0
    checkpoint_every: int = 200

    def __post_init__(self):
        if self.steps < 1 or self.micro_batch < 1 or self.grad_accum < 1:
            raise InvalidArgument("steps, micro_batch and grad_accum must be >= 1")
        if self.learning_rate <= 0.0 or self.weight_decay < 0.0:
            raise InvalidArgument("learning_rate must be > 0 and weight_decay >= 0")
        if self.checkpoint_every < 1:
            raise InvalidArgument("checkpoint_every must be >= 1")
        object.__setattr__(self, "drop_probs", tuple(float(p) for p in self.drop_probs))

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.grad_accum

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["drop_probs"] = list(self.drop_probs)
        return doc


@dataclass
class TrainingExample:
    """One supervision unit, already in tensor form."""

    target_latent: torch.Tensor  # (C, h, w)
    source_latent: torch.Tensor  # (C, h, w)
    text: np.ndarray  # (S, D)


@dataclass
class TrainReport:
    final_checkpoint: Path
    steps_completed: int
    losses: list[float] = field(default_factory=list)


def load_training_examples(
    manifest: DatasetManifest,
    codec: LatentCodec,
    text_encoder: WordSequenceEncoder,
) -> list[TrainingExample]:
    """Materializes every manifest record as an in-memory tensor example.

    Desk-scale datasets (thousands of 64x64 images) fit comfortably; a
    streaming loader would be premature here.
    """
    examples = []
    for record in manifest.records():
        source = RasterImage.load(manifest.root / record.src)
        target = RasterImage.load(manifest.root / record.tgt)
        examples.append(
            TrainingExample(
                target_latent=codec.encode(target),
                source_latent=codec.encode(source),
                text=text_encoder.encode(record.instruction),
            )
        )
    if not examples:
        raise InvalidArgument("manifest holds no records")
    return examples


def examples_from_triplets(
    triplets: Sequence,
    codec: LatentCodec,
    text_encoder: WordSequenceEncoder,
) -> list[TrainingExample]:
    if not triplets:
        raise InvalidArgument("no triplets given")
    return [
        TrainingExample(
            target_latent=codec.encode(tr.target),
            source_latent=codec.encode(tr.source),
            text=text_encoder.encode(tr.instruction),
        )
        for tr in triplets
    ]


def train(
    examples: Sequence[TrainingExample],
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    config: TrainConfig,
    out_dir: str | Path,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Runs the optimizer loop and returns the final checkpoint path."""
    if not examples:
        raise InvalidArgument("no training examples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.csv"
    ckpt_path = out_dir / "checkpoint.zip"

    torch.manual_seed(config.seed)
    sampler_gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    def snapshot() -> dict:
        return copy.deepcopy(model.state_dict())

    last_finite_state = snapshot()
    last_finite_step = 0
    losses: list[float] = []
    start = time.monotonic()
    model.train()

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["step", "loss", "lr", "wall_seconds"])

        for step in range(1, config.steps + 1):
            optimizer.zero_grad(set_to_none=True)
            step_loss = 0.0
            for _ in range(config.grad_accum):
                idx = torch.randint(
                    0, len(examples), (config.micro_batch,), generator=sampler_gen
                )
                batch = [examples[int(i)] for i in idx]
                z0 = torch.stack([ex.target_latent for ex in batch])
                cond = torch.stack([ex.source_latent for ex in batch])
                text = pad_text_batch([ex.text for ex in batch])
                draws = sample_loss_draws(
                    tuple(z0.shape),
                    schedule.timesteps,
                    config.drop_probs,
                    sampler_gen,
                )
                loss = training_loss(
                    model, z0, cond, text, schedule, config.drop_probs, draws=draws
                )
                (loss / config.grad_accum).backward()
                step_loss += float(loss.detach()) / config.grad_accum

            if not math.isfinite(step_loss):
                model.load_state_dict(last_finite_state)
                save_checkpoint(
                    ckpt_path,
                    model,
                    schedule,
                    codec,
                    last_finite_step,
                    extra={"train_config": config.to_json(), "aborted_at_step": step},
                )
                raise NumericalDivergence(
                    f"non-finite loss at optimizer step {step}", step_index=step
                )

            optimizer.step()
            losses.append(step_loss)
            writer.writerow(
                [
                    step,
                    f"{step_loss:.6f}",
                    f"{config.learning_rate:.8g}",
                    f"{time.monotonic() - start:.3f}",
                ]
            )
            log_file.flush()
            last_finite_state = snapshot()
            last_finite_step = step
            if on_step is not None:
                on_step(step, step_loss)

            if step % config.checkpoint_every == 0 and step != config.steps:
                save_checkpoint(
                    ckpt_path,
                    model,
                    schedule,
                    codec,
                    step,
                    extra={"train_config": config.to_json()},
                )

    save_checkpoint(
        ckpt_path,
        model,
        schedule,
        codec,
        config.steps,
        extra={"train_config": config.to_json()},
    )
    return TrainReport(
        final_checkpoint=ckpt_path, steps_completed=config.steps, losses=losses
    )
