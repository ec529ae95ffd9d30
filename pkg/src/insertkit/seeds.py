"""Deterministic seed derivation.

Multi-step pipelines (beam search, the session service, candidate fan-out)
need child seeds that are stable across processes and platforms.  Python's
builtin ``hash`` is salted per process, so we derive from blake2b instead.
"""

from __future__ import annotations

import hashlib
import struct

# Seeds stay in the non-negative int64 range so they are valid for
# numpy Generators and torch Generators alike.
_SEED_MASK = (1 << 63) - 1


def derive_seed(base: int, *parts: int | str) -> int:
    """Derive a child seed from ``base`` and a path of parts.

    The same (base, parts) always yields the same seed; distinct paths
    yield independent-looking seeds.  Parts may be ints or strings.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", base & 0xFFFFFFFFFFFFFFFF))
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")
        if isinstance(part, int):
            h.update(b"i")
            h.update(struct.pack("<Q", part & 0xFFFFFFFFFFFFFFFF))
        else:
            h.update(b"s")
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") & _SEED_MASK


def stable_text_seed(text: str) -> int:
    """Map arbitrary text to a reproducible non-negative int64 seed."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & _SEED_MASK
