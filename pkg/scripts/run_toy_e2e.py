#!/usr/bin/env python3
"""Run the desk-scale end-to-end insertion experiment.

Builds the held-out-split shape world, runs the dataset factory, trains the
toy denoiser, and scores 100 held-out prompts with the color-blob oracle.

    python3 scripts/run_toy_e2e.py --workdir /tmp/toy-e2e --steps 1500

The defaults mirror ToyExperimentConfig; every knob is overridable to probe
smaller/larger recipes.  Writes <workdir>/report.json and prints a summary.
"""

import argparse
import sys

from insertkit.experiments import ToyExperimentConfig, run_toy_insertion_experiment


def main(argv=None) -> int:
    defaults = ToyExperimentConfig()
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", required=True, help="scratch directory")
    parser.add_argument("--save-samples", action="store_true",
                        help="write every sampled PNG under <workdir>/samples")
    for name, value in (
        ("train-triples", defaults.train_triples),
        ("heldout-prompts", defaults.heldout_prompts),
        ("images", defaults.images),
        ("decoy-layouts", defaults.decoy_layouts),
        ("empty-every", defaults.empty_every),
        ("size", defaults.size),
        ("base-channels", defaults.base_channels),
        ("time-dim", defaults.time_dim),
        ("steps", defaults.steps),
        ("micro-batch", defaults.micro_batch),
        ("grad-accum", defaults.grad_accum),
        ("sample-steps", defaults.sample_steps),
        ("seed", defaults.seed),
    ):
        parser.add_argument(f"--{name}", type=int, default=value)
    for name, value in (
        ("learning-rate", defaults.learning_rate),
        ("image-guidance", defaults.image_guidance),
        ("text-guidance", defaults.text_guidance),
    ):
        parser.add_argument(f"--{name}", type=float, default=value)
    parser.add_argument("--channel-mults", default=",".join(map(str, defaults.channel_mults)),
                        help="comma-separated, e.g. 1,2,2")
    args = parser.parse_args(argv)

    config = ToyExperimentConfig(
        train_triples=args.train_triples,
        heldout_prompts=args.heldout_prompts,
        images=args.images,
        decoy_layouts=args.decoy_layouts,
        empty_every=args.empty_every,
        size=args.size,
        base_channels=args.base_channels,
        channel_mults=tuple(int(m) for m in args.channel_mults.split(",")),
        time_dim=args.time_dim,
        steps=args.steps,
        micro_batch=args.micro_batch,
        grad_accum=args.grad_accum,
        learning_rate=args.learning_rate,
        sample_steps=args.sample_steps,
        image_guidance=args.image_guidance,
        text_guidance=args.text_guidance,
        seed=args.seed,
    )
    report = run_toy_insertion_experiment(
        config, args.workdir, save_samples=args.save_samples
    )
    ev = report.eval
    print(f"dataset records: {report.records_written}")
    print(f"loss: first-window mean {report.first_losses_mean:.4f} -> "
          f"last-window mean {report.last_losses_mean:.4f}")
    print(f"train wall time: {report.train_seconds:.1f}s")
    print(f"held-out success: {ev.successes}/{ev.total} ({ev.success_rate:.0%})")
    print(f"mean background MAE: {ev.mean_background_mae:.4f}")
    if ev.failure_counts:
        print(f"failures: {ev.failure_counts}")
    print(f"report: {args.workdir}/report.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
