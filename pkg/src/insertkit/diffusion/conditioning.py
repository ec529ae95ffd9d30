"""Text conditioning: instruction -> embedding token sequence.

The denoiser consumes text as a (S, D) sequence of word embeddings produced
by whatever Embedder backend is configured.  The null condition is the
all-zero single-token sequence; because the attention value/key projections
are bias-free, zero tokens contribute nothing, so zero-padding ragged
batches is safe.
"""

from __future__ import annotations

import re

import numpy as np
import torch

from insertkit.backends.base import Embedder
from insertkit.errors import InvalidArgument

_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def tokenize_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class WordSequenceEncoder:
    """Encodes an instruction as a sequence of per-word embedding vectors."""

    def __init__(self, embedder: Embedder, max_tokens: int = 16):
        if max_tokens < 1:
            raise InvalidArgument("max_tokens must be >= 1")
        self.embedder = embedder
        self.max_tokens = max_tokens
        self._dim: int | None = None
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = int(np.asarray(self.embedder.embed_text("probe")).shape[0])
        return self._dim

    def _word_vector(self, word: str) -> np.ndarray:
        vec = self._cache.get(word)
        if vec is None:
            vec = np.asarray(self.embedder.embed_text(word), dtype=np.float32)
            self._cache[word] = vec
        return vec

    def encode(self, text: str) -> np.ndarray:
        """Returns a float32 (S, D) array; the null sequence for empty text."""
        words = tokenize_words(text)[: self.max_tokens]
        if not words:
            return np.zeros((1, self.dim), dtype=np.float32)
        return np.stack([self._word_vector(w) for w in words])

    def __call__(self, text: str) -> np.ndarray:
        return self.encode(text)


def pad_text_batch(sequences: list[np.ndarray]) -> torch.Tensor:
    """Stacks ragged (S_i, D) sequences into a zero-padded (B, S_max, D) tensor."""
    if not sequences:
        raise InvalidArgument("empty batch")
    dim = sequences[0].shape[1]
    longest = max(seq.shape[0] for seq in sequences)
    out = torch.zeros(len(sequences), longest, dim, dtype=torch.float32)
    for i, seq in enumerate(sequences):
        if seq.ndim != 2 or seq.shape[1] != dim:
            raise InvalidArgument("all sequences must share the embedding dim")
        out[i, : seq.shape[0]] = torch.from_numpy(np.ascontiguousarray(seq))
    return out
