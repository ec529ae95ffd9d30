#!/usr/bin/env python3
"""Build an insertion dataset from the deterministic mock world.

Renders a procedural shape scenario to PNGs, runs the erase-to-insert
factory over them, and validates the result:

    python3 scripts/build_dataset.py --out /tmp/shapes-ds --images 20

Equivalent to `insertkit datagen` against a mock config, plus input
rendering and a validation pass, in one command.
"""

import argparse
import sys

from insertkit.backends.mock import mock_suite, shapes_scenario
from insertkit.datagen.manifest import DatasetManifest
from insertkit.datagen.pipeline import PipelineConfig, run_pipeline
from insertkit.datagen.validate import validate_dataset


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="dataset root directory")
    parser.add_argument("--images", type=int, default=20)
    parser.add_argument("--objects-per-image", type=int, default=2)
    parser.add_argument("--captions-per-object", type=int, default=3)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    scenario = shapes_scenario(
        "build-dataset",
        num_images=args.images,
        objects_per_image=args.objects_per_image,
        captions_per_object=args.captions_per_object,
        size=args.size,
        seed=args.seed,
    )
    suite = mock_suite(scenario)
    input_dir = f"{args.out}-inputs"
    suite.write_inputs(input_dir)
    report = run_pipeline(
        input_dir, args.out, suite, PipelineConfig(seed=args.seed)
    )
    print(
        f"images: {report.images_processed} processed, "
        f"{report.images_failed} failed of {report.images_seen}"
    )
    print(f"records written: {report.records_written}")

    validation = validate_dataset(DatasetManifest.open(args.out))
    print(f"validation: {validation.checked} checked, "
          f"{len(validation.violations)} violations")
    return 0 if validation.ok else 1


if __name__ == "__main__":
    sys.exit(main())
