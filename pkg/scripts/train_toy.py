#!/usr/bin/env python3
"""Train the toy conditional denoiser on an existing dataset.

    python3 scripts/build_dataset.py --out /tmp/shapes-ds --images 40
    python3 scripts/train_toy.py --data /tmp/shapes-ds --out /tmp/toy-run --steps 200

Prints the loss trajectory summary and checkpoint path; the run directory
holds the loss CSV and periodic checkpoints.  Equivalent to
`insertkit train` with dataclass-level access to every knob.
"""

import argparse
import sys

import numpy as np
import torch

from insertkit.backends.mock import mock_suite, shapes_scenario
from insertkit.datagen.manifest import DatasetManifest
from insertkit.diffusion import (
    DenoiserConfig,
    IdentityCodec,
    ToyDenoiser,
    TrainConfig,
    WordSequenceEncoder,
    load_training_examples,
    make_schedule,
    train,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True, help="dataset root")
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--micro-batch", type=int, default=8)
    parser.add_argument("--grad-accum", type=int, default=2)
    parser.add_argument("--lr", type=float, default=2e-4)
    parser.add_argument("--base-channels", type=int, default=32)
    parser.add_argument("--checkpoint-every", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    # Any scenario provides the shared word-embedding space; the encoder
    # embeds per word, so it covers every shapes vocabulary.
    suite = mock_suite(shapes_scenario("train-toy"))
    encoder = WordSequenceEncoder(suite.embedder)
    torch.manual_seed(args.seed)
    model = ToyDenoiser(
        DenoiserConfig(
            latent_channels=3,
            base_channels=args.base_channels,
            channel_mults=(1, 2, 2),
            text_dim=encoder.dim,
        )
    )
    print("parameters:", sum(p.numel() for p in model.parameters()))

    examples = load_training_examples(
        DatasetManifest.open(args.data), IdentityCodec(), encoder
    )
    print("examples:", len(examples))
    result = train(
        examples,
        model,
        make_schedule(),
        IdentityCodec(),
        TrainConfig(
            steps=args.steps,
            micro_batch=args.micro_batch,
            grad_accum=args.grad_accum,
            learning_rate=args.lr,
            checkpoint_every=args.checkpoint_every,
            seed=args.seed,
        ),
        args.out,
    )
    losses = np.asarray(result.losses)
    window = min(50, max(1, len(losses) // 2))
    print(f"loss: first-{window} mean {losses[:window].mean():.4f} -> "
          f"last-{window} mean {losses[-window:].mean():.4f}")
    print(f"checkpoint: {result.final_checkpoint}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
