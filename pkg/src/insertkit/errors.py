"""Exception taxonomy shared across the toolkit.

Every error raised by this package derives from :class:`InsertKitError` so
callers can catch the whole family with one clause.  Subclasses also inherit
from the closest builtin (ValueError, RuntimeError, ...) to stay friendly to
code that only knows the stdlib hierarchy.
"""

from __future__ import annotations


class InsertKitError(Exception):
    """Base class for all package errors."""


class InvalidArgument(InsertKitError, ValueError):
    """A caller violated a documented precondition."""


class ParseError(InsertKitError, ValueError):
    """A model reply could not be parsed.

    Carries the offending text so pipelines can log it verbatim.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class BackendUnavailable(InsertKitError, RuntimeError):
    """A remote backend stayed unreachable after all retries."""


class BackendRejected(InsertKitError, RuntimeError):
    """A remote backend rejected the request (non-transient, no retry)."""

    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class InvalidState(InsertKitError, RuntimeError):
    """An operation was attempted in a state that forbids it."""


class SkipObject(InsertKitError, RuntimeError):
    """A proposed object cannot yield triplets and should be skipped.

    ``reason`` is a short machine-readable slug ("empty-mask",
    "erase-failed") recorded in rejection sidecars.
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


class CompositionError(InsertKitError, RuntimeError):
    """A multi-step composition failed mid-sequence.

    ``completed`` holds the images committed before the failure so callers
    can inspect or resume.
    """

    def __init__(self, message: str, step_index: int, completed: tuple = ()):
        super().__init__(message)
        self.step_index = step_index
        self.completed = tuple(completed)


class NumericalDivergence(InsertKitError, ArithmeticError):
    """A numerical routine produced non-finite values.

    ``step_index`` pinpoints the sampler step or optimizer step that blew up.
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index
