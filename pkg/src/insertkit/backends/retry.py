"""Retry policy for remote backend calls.

Transient failures (timeouts, connection resets, 5xx replies) are retried
with exponential backoff and full jitter; 4xx replies mean the request
itself is bad and are never retried.
"""

from __future__ import annotations

import random
import time
from typing import Callable, TypeVar

import httpx

from insertkit.backends.base import BackendConfig
from insertkit.errors import BackendRejected, BackendUnavailable

T = TypeVar("T")

BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0


def backoff_delay(attempt: int, rng: random.Random) -> float:
    """Full-jitter delay before retry number ``attempt`` (0-based)."""
    return rng.uniform(0.0, BACKOFF_BASE_SECONDS * BACKOFF_FACTOR**attempt)


def invoke_with_retry(
    config: BackendConfig,
    send: Callable[[], httpx.Response],
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> httpx.Response:
    """Run one request attempt via ``send`` until success or retries exhaust.

    ``send`` performs a single HTTP attempt and returns the response (it may
    raise httpx transport errors).  Responses with 2xx status are returned;
    4xx raises BackendRejected immediately; transport errors and 5xx are
    retried up to config.max_retries times, then raise BackendUnavailable.
    """
    rng = rng if rng is not None else random.Random()
    attempts = config.max_retries + 1
    last_failure: str = "no attempt made"
    for attempt in range(attempts):
        try:
            response = send()
        except httpx.TransportError as exc:
            last_failure = f"transport error: {exc}"
        else:
            status = response.status_code
            if 200 <= status < 300:
                return response
            if 400 <= status < 500:
                raise BackendRejected(
                    f"backend rejected request with status {status}: {_snippet(response)}",
                    status_code=status,
                )
            last_failure = f"status {status}: {_snippet(response)}"
        if attempt + 1 < attempts:
            sleep(backoff_delay(attempt, rng))
    raise BackendUnavailable(
        f"backend unreachable after {attempts} attempt(s); last failure: {last_failure}"
    )


def _snippet(response: httpx.Response, limit: int = 200) -> str:
    try:
        body = response.text
    except Exception:
        return "<unreadable body>"
    return body[:limit]
