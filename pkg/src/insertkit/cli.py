"""Command-line entry point.

    insertkit datagen   build an insertion dataset from a directory of images
    insertkit validate  check a dataset against its structural invariants
    insertkit train     train the conditional denoiser on a dataset
    insertkit insert    apply one instruction to one image
    insertkit compose   apply a plan file step by step (one candidate each)
    insertkit beam      beam-search a plan file and write the trace
    insertkit eval      score a generator over a benchmark JSONL
    insertkit serve     run the interactive session service

Every subcommand accepts --seed and --config; flags override config-file
values.  Exit codes: 0 success, 1 operational error, 2 usage error.
Plan files are UTF-8, one instruction per line; blank lines and lines
starting with '#' are ignored.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from insertkit.errors import InsertKitError


def read_plan(path: str | Path) -> list[str]:
    """One instruction per line; blanks and #-comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]


def _load_doc(args) -> dict:
    from insertkit.config import load_config_file

    return load_config_file(args.config) if args.config else {}


def _merged(section: dict, flag_overrides: dict) -> dict:
    merged = dict(section)
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    return merged


# -- subcommand handlers ---------------------------------------------------


def cmd_datagen(args) -> int:
    from insertkit.config import build_suite
    from insertkit.datagen.pipeline import PipelineConfig, run_pipeline

    doc = _load_doc(args)
    suite = build_suite(doc)
    options = _merged(
        doc.get("datagen", {}),
        {
            "samples": args.samples,
            "iou_threshold": args.iou_threshold,
            "dilation_radius": args.dilation,
            "max_bbox_area": args.max_bbox_area,
            "workers": args.workers,
        },
    )
    options["seed"] = args.seed
    report = run_pipeline(args.input, args.out, suite, PipelineConfig(**options))
    print(f"dataset root: {args.out}")
    print(
        f"images: {report.images_processed} processed, {report.images_failed} failed "
        f"of {report.images_seen} seen"
    )
    print(
        f"records written: {report.records_written} "
        f"(objects rejected: {report.objects_rejected})"
    )
    return 0


def cmd_validate(args) -> int:
    from insertkit.datagen.manifest import DatasetManifest
    from insertkit.datagen.validate import validate_dataset

    report = validate_dataset(DatasetManifest.open(args.data))
    for v in report.violations:
        print(f"{v.record_id}: {v.kind} {v.detail}".rstrip(), file=sys.stderr)
    print(f"checked {report.checked} records, {len(report.violations)} violations")
    return 0 if report.ok else 1


def cmd_train(args) -> int:
    from insertkit.config import build_suite
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

    doc = _load_doc(args)
    suite = build_suite(doc)
    codec = IdentityCodec()
    text_encoder = WordSequenceEncoder(suite.embedder)

    model_opts = dict(doc.get("model", {}))
    model_opts.setdefault("text_dim", text_encoder.dim)
    model = ToyDenoiser(DenoiserConfig(**model_opts))

    sched_opts = dict(doc.get("schedule", {}))
    schedule = make_schedule(
        kind=sched_opts.get("kind", "scaled_linear"),
        timesteps=int(sched_opts.get("timesteps", 1000)),
        beta_start=float(sched_opts.get("beta_start", 0.00085)),
        beta_end=float(sched_opts.get("beta_end", 0.012)),
    )

    train_opts = _merged(
        doc.get("train", {}),
        {
            "steps": args.steps,
            "micro_batch": args.micro_batch,
            "grad_accum": args.grad_accum,
            "learning_rate": args.lr,
            "checkpoint_every": args.checkpoint_every,
        },
    )
    train_opts["seed"] = args.seed
    if "drop_probs" in train_opts:
        train_opts["drop_probs"] = tuple(train_opts["drop_probs"])
    config = TrainConfig(**train_opts)

    manifest = DatasetManifest.open(args.data)
    examples = load_training_examples(manifest, codec, text_encoder)
    print(f"training on {len(examples)} examples for {config.steps} steps")
    report = train(examples, model, schedule, codec, config, args.out)
    print(f"final loss: {report.losses[-1]:.6f}")
    print(f"checkpoint: {report.final_checkpoint}")
    return 0


def _generator_and_embedder(args, doc):
    from insertkit.config import build_generator, build_suite

    suite = build_suite(doc)
    checkpoint = getattr(args, "checkpoint", None)
    generator = build_generator(doc, suite, checkpoint=checkpoint, seed=args.seed)
    return generator, suite.embedder


def cmd_insert(args) -> int:
    from insertkit.core.image import RasterImage

    generator, _ = _generator_and_embedder(args, _load_doc(args))
    image = RasterImage.load(args.image)
    edited = generator.edit(image, args.prompt, 1, args.seed)[0]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    edited.save_png(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_compose(args) -> int:
    from insertkit.compose import EditPlan, iterative_insert
    from insertkit.core.image import RasterImage

    generator, _ = _generator_and_embedder(args, _load_doc(args))
    plan = EditPlan(
        background=RasterImage.load(args.image),
        instructions=tuple(read_plan(args.plan)),
    )
    images = iterative_insert(plan, generator, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        image.save_png(out_dir / f"step_{i:02d}.png")
    print(f"wrote {len(images)} images (background + {len(images) - 1} steps) to {out_dir}")
    return 0


def cmd_beam(args) -> int:
    from insertkit.compose import EditPlan, beam_search, write_beam_trace
    from insertkit.core.image import RasterImage

    generator, embedder = _generator_and_embedder(args, _load_doc(args))
    plan = EditPlan(
        background=RasterImage.load(args.image),
        instructions=tuple(read_plan(args.plan)),
    )
    trace = beam_search(
        plan, generator, embedder, k=args.k, n=args.n, seed=args.seed
    )
    trace_path = write_beam_trace(trace, args.out)
    print(f"trace: {trace_path}")
    print(f"final score: {trace.final.score:.6f} history: {list(trace.final.history)}")
    return 0


def cmd_eval(args) -> int:
    from insertkit.evalsuite import evaluate_benchmark, load_benchmark, write_report

    doc = _load_doc(args)
    generator, embedder = _generator_and_embedder(args, doc)
    records = load_benchmark(args.bench)
    report = evaluate_benchmark(
        records, generator, embedder, seed=args.seed, workers=args.workers
    )
    path = write_report(report, args.out)
    print(f"report: {path}")
    print(
        f"evaluated {report.evaluated} ({report.failed} failed); "
        f"clip_out_mean={report.clip_out_mean} clip_dir_mean={report.clip_dir_mean}"
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from insertkit.config import build_service_config
    from insertkit.service.app import create_app

    doc = _load_doc(args)
    generator, embedder = _generator_and_embedder(args, doc)
    service_config = build_service_config(
        doc,
        max_side=args.max_side,
        media_dir=args.media_dir,
        persist_dir=args.persist_dir,
    )
    app = create_app(generator, embedder, service_config)
    print(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="insertkit",
        description="Instruction-guided object insertion toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, handler, help_text: str):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
        p.add_argument(
            "--config",
            metavar="FILE",
            help="TOML or JSON config file; flags override its values",
        )
        p.set_defaults(func=handler)
        return p

    p = add("datagen", cmd_datagen, "Build an insertion dataset from a directory of images.")
    p.add_argument("--input", required=True, metavar="DIR", help="directory of source images")
    p.add_argument("--out", required=True, metavar="DIR", help="dataset root to create/extend")
    p.add_argument("--samples", type=int, help="grounding draws per object (default 3)")
    p.add_argument("--iou-threshold", type=float, help="consensus IoU threshold (default 0.8)")
    p.add_argument("--dilation", type=int, help="mask dilation px (default: 10px at 512, scaled)")
    p.add_argument("--max-bbox-area", type=float, help="max normalized box area (default 0.6)")
    p.add_argument("--workers", type=int, help="concurrent images (default 4)")

    p = add("validate", cmd_validate, "Check a dataset against its structural invariants.")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")

    p = add("train", cmd_train, "Train the conditional denoiser on a dataset.")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory for checkpoints/logs")
    p.add_argument("--steps", type=int, help="optimizer steps (default 1000)")
    p.add_argument("--micro-batch", type=int, help="examples per micro-batch (default 4)")
    p.add_argument("--grad-accum", type=int, help="micro-batches per step (default 384)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--checkpoint-every", type=int, help="steps between checkpoints (default 200)")

    p = add("insert", cmd_insert, "Apply one instruction to one image.")
    p.add_argument("--image", required=True, metavar="PATH", help="background image")
    p.add_argument("--prompt", required=True, help="insertion instruction")
    p.add_argument("--checkpoint", metavar="PATH", help="denoiser checkpoint (default: config generator)")
    p.add_argument("--out", required=True, metavar="PATH", help="output PNG path")

    p = add("compose", cmd_compose, "Apply a plan file step by step, one candidate per step.")
    p.add_argument("--image", required=True, metavar="PATH", help="background image")
    p.add_argument("--plan", required=True, metavar="FILE", help="plan file, one instruction per line")
    p.add_argument("--checkpoint", metavar="PATH", help="denoiser checkpoint (default: config generator)")
    p.add_argument("--out", required=True, metavar="DIR", help="directory for step images")

    p = add("beam", cmd_beam, "Beam-search a plan file and write the trace.")
    p.add_argument("--image", required=True, metavar="PATH", help="background image")
    p.add_argument("--plan", required=True, metavar="FILE", help="plan file, one instruction per line")
    p.add_argument("--k", type=int, default=3, help="beam width (default 3)")
    p.add_argument("--n", type=int, default=4, help="candidates per beam per step (default 4)")
    p.add_argument("--checkpoint", metavar="PATH", help="denoiser checkpoint (default: config generator)")
    p.add_argument("--out", required=True, metavar="DIR", help="trace output directory")

    p = add("eval", cmd_eval, "Score a generator over a benchmark JSONL.")
    p.add_argument("--bench", required=True, metavar="FILE", help="benchmark JSONL")
    p.add_argument("--checkpoint", metavar="PATH", help="denoiser checkpoint (default: config generator)")
    p.add_argument("--out", required=True, metavar="DIR", help="report output directory")
    p.add_argument("--workers", type=int, default=4, help="parallel records (default 4)")

    p = add("serve", cmd_serve, "Run the interactive session service.")
    p.add_argument("--host", default="127.0.0.1", help="bind address (default 127.0.0.1)")
    p.add_argument("--port", type=int, default=8000, help="port (default 8000)")
    p.add_argument("--checkpoint", metavar="PATH", help="denoiser checkpoint (default: config generator)")
    p.add_argument("--max-side", type=int, help="max upload dimension (default 1024)")
    p.add_argument("--media-dir", metavar="DIR", help="candidate image directory (default: temp)")
    p.add_argument("--persist-dir", metavar="DIR", help="session write-through directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InsertKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
