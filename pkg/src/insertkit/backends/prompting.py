"""Access to the prompt texts shipped with the package.

The prompts are resource files, not string literals, so deployments can audit
exactly what gets sent to remote models.  They are loaded read-only; nothing
in the package mutates them.
"""

from __future__ import annotations

from importlib import resources

from insertkit.errors import InvalidArgument

_DETECTOR_PLACEHOLDER = "[object]"


def _load(name: str) -> str:
    return resources.files("insertkit.backends").joinpath("prompts", name).read_text(encoding="utf-8")


def captioner_prompt() -> str:
    """The object-proposal prompt sent with every describe request."""
    return _load("captioner.txt")


def detector_prompt(phrase: str) -> str:
    """The grounding prompt for one phrase."""
    if not phrase or not phrase.strip():
        raise InvalidArgument("grounding phrase must be nonempty")
    template = _load("detector.txt").rstrip("\n")
    return template.replace(_DETECTOR_PLACEHOLDER, phrase)
