"""Dataset factory: erase objects out of real images to learn to insert them."""

from insertkit.datagen.consensus import ConsensusDetection, consensus_detect
from insertkit.datagen.manifest import DatasetManifest, ManifestRecord
from insertkit.datagen.pipeline import (
    PipelineConfig,
    PipelineReport,
    expected_record_count,
    run_pipeline,
)
from insertkit.datagen.triplets import (
    DEFAULT_INSTRUCTION_TEMPLATE,
    EditTriplet,
    Provenance,
    build_triplets,
    default_dilation_radius,
)
from insertkit.datagen.validate import ValidationReport, Violation, validate_dataset

__all__ = [
    "ConsensusDetection",
    "consensus_detect",
    "DatasetManifest",
    "ManifestRecord",
    "PipelineConfig",
    "PipelineReport",
    "run_pipeline",
    "expected_record_count",
    "EditTriplet",
    "Provenance",
    "build_triplets",
    "default_dilation_radius",
    "DEFAULT_INSTRUCTION_TEMPLATE",
    "ValidationReport",
    "Violation",
    "validate_dataset",
]
