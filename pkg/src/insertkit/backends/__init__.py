"""Backend contracts, HTTP clients, and the deterministic mock suite."""

from insertkit.backends.base import (
    ROLES,
    BackendConfig,
    BackendSuite,
    Captioner,
    Embedder,
    Eraser,
    Generator,
    GroundingDetector,
    ObjectProposal,
    Segmenter,
)
from insertkit.backends.mock import (
    SCENARIOS,
    IdentityGenerator,
    MockScenario,
    mock_suite,
    shapes_scenario,
)
from insertkit.backends.parsing import parse_caption_json, serialize_proposals
from insertkit.backends.prompting import captioner_prompt, detector_prompt
from insertkit.backends.retry import invoke_with_retry

__all__ = [
    "ROLES",
    "BackendConfig",
    "BackendSuite",
    "Captioner",
    "GroundingDetector",
    "Segmenter",
    "Eraser",
    "Embedder",
    "Generator",
    "ObjectProposal",
    "MockScenario",
    "IdentityGenerator",
    "SCENARIOS",
    "mock_suite",
    "shapes_scenario",
    "parse_caption_json",
    "serialize_proposals",
    "captioner_prompt",
    "detector_prompt",
    "invoke_with_retry",
]
