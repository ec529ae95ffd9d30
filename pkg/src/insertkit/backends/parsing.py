"""Parsing and serialization of captioner replies.

The captioner is prompted to answer with a JSON object mapping each subject
identification to its list of fine captions.  Replies frequently arrive
wrapped in markdown code fences, so those are stripped before parsing.
"""

from __future__ import annotations

import json
import re

from insertkit.backends.base import ObjectProposal
from insertkit.errors import InvalidArgument, ParseError

_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.DOTALL)


def strip_code_fences(text: str) -> str:
    m = _FENCE_RE.match(text)
    return m.group(1) if m else text


def parse_caption_json(raw_text: str) -> list[ObjectProposal]:
    """Parse a captioner reply into proposals, order preserved.

    An empty object parses to an empty list.  Anything else malformed raises
    ParseError carrying the original text.
    """
    text = strip_code_fences(raw_text)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"reply is not valid JSON: {exc}", raw_text=raw_text) from exc
    if not isinstance(obj, dict):
        raise ParseError(
            f"reply must be a JSON object, got {type(obj).__name__}", raw_text=raw_text
        )
    proposals: list[ObjectProposal] = []
    for subject, captions in obj.items():
        if not isinstance(captions, list) or not all(isinstance(c, str) for c in captions):
            raise ParseError(
                f"captions for {subject!r} must be a list of strings", raw_text=raw_text
            )
        try:
            proposals.append(ObjectProposal(subject, tuple(captions)))
        except InvalidArgument as exc:
            raise ParseError(str(exc), raw_text=raw_text) from exc
    return proposals


def serialize_proposals(proposals: list[ObjectProposal]) -> str:
    """Inverse of parse_caption_json, used by the mock wire server."""
    return json.dumps(
        {p.subject_id: list(p.fine_captions) for p in proposals}, indent=2
    )
