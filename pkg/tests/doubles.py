"""Deterministic test doubles shared by the composition, evaluation,
service, and CLI tests.

Images are tiny uint8-valued labels, so their PNG round-trips are bit-exact
and identity can be recovered from pixel bytes.  Embedding vectors are
explicit lookup tables, which makes every cosine score a hand-computable
fixture value.
"""

from __future__ import annotations

import math

import numpy as np

from insertkit.backends.base import Embedder, Generator
from insertkit.core.image import RasterImage
from insertkit.errors import BackendUnavailable


def label_image(label: int, size: int = 2) -> RasterImage:
    """A small image whose pixels encode ``label`` exactly at uint8 depth."""
    if not 0 <= label < 256 * 256:
        raise ValueError("label out of range")
    arr = np.full((size, size, 3), label % 256, dtype=np.uint8)
    arr[0, 0, 1] = label // 256
    return RasterImage(arr)


def image_key(image: RasterImage) -> bytes:
    return image.data.tobytes()


def score_vec(*scores: float, dim: int = 4) -> np.ndarray:
    """A unit vector whose cosine against basis vector e_i is scores[i].

    Requires sum(s^2) <= 1; remaining mass goes into the last component.
    """
    total = sum(s * s for s in scores)
    if total > 1.0 + 1e-12:
        raise ValueError("scores describe an impossible unit vector")
    vec = np.zeros(dim, dtype=np.float64)
    vec[: len(scores)] = scores
    vec[dim - 1] = math.sqrt(max(0.0, 1.0 - total))
    return vec


def basis(i: int, dim: int = 4) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    vec[i] = 1.0
    return vec


class FixtureEmbedder(Embedder):
    """Embedder backed by explicit tables; unknown inputs fail loudly."""

    identifier = "fixture-embedder"

    def __init__(self, dim: int = 4):
        self.dim = dim
        self._text: dict[str, np.ndarray] = {}
        self._image: dict[bytes, np.ndarray] = {}

    def set_text(self, text: str, vec) -> "FixtureEmbedder":
        self._text[text] = np.asarray(vec, dtype=np.float64)
        return self

    def set_image(self, image: RasterImage, vec) -> "FixtureEmbedder":
        self._image[image_key(image)] = np.asarray(vec, dtype=np.float64)
        return self

    def embed_text(self, text: str) -> np.ndarray:
        if text not in self._text:
            raise KeyError(f"no fixture embedding for text {text!r}")
        return self._text[text]

    def embed_image(self, image: RasterImage) -> np.ndarray:
        key = image_key(image)
        if key not in self._image:
            raise KeyError("no fixture embedding for image")
        return self._image[key]


class ScriptedGenerator(Generator):
    """Replays a script mapping (parent label, instruction) -> child labels.

    Candidate i of a call is the i-th scripted child; calls are recorded as
    (parent_label, instruction, n, seed) for contract assertions.
    """

    identifier = "scripted-generator"

    def __init__(self, script: dict[tuple[int, str], list[int]]):
        self.script = dict(script)
        self.calls: list[tuple[int, str, int, int]] = []
        self.images: dict[int, RasterImage] = {}
        self._labels: dict[bytes, int] = {}
        for (parent, _), children in self.script.items():
            for label in [parent, *children]:
                self.ensure(label)

    def ensure(self, label: int) -> RasterImage:
        if label not in self.images:
            image = label_image(label)
            self.images[label] = image
            self._labels[image_key(image)] = label
        return self.images[label]

    def adopt(self, label: int, image: RasterImage) -> RasterImage:
        """Registers an externally built image (e.g. an all-zero source)."""
        self.images[label] = image
        self._labels[image_key(image)] = label
        return image

    def label_of(self, image: RasterImage) -> int:
        key = image_key(image)
        if key not in self._labels:
            raise BackendUnavailable("scripted generator got an unknown image")
        return self._labels[key]

    def edit(self, image, instruction, n, seed):
        label = self.label_of(image)
        self.calls.append((label, instruction, n, seed))
        children = self.script.get((label, instruction))
        if children is None:
            raise BackendUnavailable(
                f"no script entry for (label {label}, {instruction!r})"
            )
        if len(children) < n:
            raise BackendUnavailable(
                f"script entry for label {label} has {len(children)} children, need {n}"
            )
        return [self.ensure(c) for c in children[:n]]


class FailingGenerator(Generator):
    """Fails after ``succeed_calls`` successful edits (0 = always fails)."""

    identifier = "failing-generator"

    def __init__(self, succeed_calls: int = 0, delegate: Generator | None = None):
        self.succeed_calls = succeed_calls
        self.delegate = delegate
        self.calls = 0

    def edit(self, image, instruction, n, seed):
        self.calls += 1
        if self.calls > self.succeed_calls:
            raise BackendUnavailable("backend is down")
        if self.delegate is None:
            return [image for _ in range(n)]
        return self.delegate.edit(image, instruction, n, seed)
