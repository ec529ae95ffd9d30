"""Vision-model backend contracts.

Every heavy model the toolkit leans on (captioner, grounding detector,
segmenter, eraser, embedder, edit generator) sits behind one of these
interfaces, so pipelines run identically against remote services and the
in-process mock suite.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from insertkit.core.geometry import BBox
from insertkit.core.image import RasterImage
from insertkit.core.mask import BinaryMask
from insertkit.errors import InvalidArgument


@dataclass(frozen=True)
class ObjectProposal:
    """One insertable object found by the captioner.

    Attributes:
        subject_id: Coarse phrase naming the object, used for grounding.
        fine_captions: Detailed captions, order preserved from the reply.
    """

    subject_id: str
    fine_captions: tuple[str, ...]

    def __post_init__(self):
        if not self.subject_id or not self.subject_id.strip():
            raise InvalidArgument("subject_id must be a nonempty string")
        if not self.fine_captions:
            raise InvalidArgument(f"proposal {self.subject_id!r} has no fine captions")
        if any(not c or not c.strip() for c in self.fine_captions):
            raise InvalidArgument(f"proposal {self.subject_id!r} contains an empty caption")
        object.__setattr__(self, "fine_captions", tuple(self.fine_captions))


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for one remote backend role.

    Attributes:
        endpoint: Base URL of the service.
        api_key_env: Name of the environment variable holding the bearer
            token.  Secrets never live in config files, only their env
            variable names do.
        timeout: Per-request timeout in seconds, > 0.
        max_retries: Retries after the first attempt, >= 0.
        temperature: Default sampling temperature for stochastic backends.
        max_in_flight: Concurrent request bound per client.
    """

    endpoint: str
    api_key_env: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.2
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.endpoint:
            raise InvalidArgument("endpoint must be nonempty")
        if self.timeout <= 0:
            raise InvalidArgument(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise InvalidArgument(f"max_retries must be >= 0, got {self.max_retries}")
        if self.temperature < 0:
            raise InvalidArgument(f"temperature must be >= 0, got {self.temperature}")
        if self.max_in_flight < 1:
            raise InvalidArgument(f"max_in_flight must be >= 1, got {self.max_in_flight}")


class Captioner(ABC):
    """Proposes insertable objects with coarse and fine captions."""

    identifier: str = "captioner"

    @abstractmethod
    def describe(self, image: RasterImage) -> list[ObjectProposal]:
        """List objects visible in the image.  May be empty."""


class GroundingDetector(ABC):
    """Localizes a phrase in an image."""

    identifier: str = "detector"

    @abstractmethod
    def locate(self, image: RasterImage, phrase: str, temperature: float | None = None) -> BBox | None:
        """One stochastic localization draw; None when nothing is found."""


class Segmenter(ABC):
    """Produces a pixel mask for the object inside a box."""

    identifier: str = "segmenter"

    @abstractmethod
    def segment(self, image: RasterImage, box: BBox) -> BinaryMask:
        """Mask of the object inside ``box``; may be empty."""


class Eraser(ABC):
    """Removes masked content, inpainting a plausible background."""

    identifier: str = "eraser"

    @abstractmethod
    def erase(self, image: RasterImage, mask: BinaryMask) -> RasterImage:
        """Image with the masked region replaced by background."""


class Embedder(ABC):
    """Maps images and texts into a shared unit-norm embedding space."""

    identifier: str = "embedder"
    dim: int = 0

    @abstractmethod
    def embed_image(self, image: RasterImage) -> np.ndarray:
        """L2-normalized (dim,) float vector."""

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """L2-normalized (dim,) float vector."""


class Generator(ABC):
    """Applies an insertion instruction to an image.

    Candidate i of ``edit(image, instruction, n, seed)`` must depend only on
    (image, instruction, seed + i): generating n candidates and later
    regenerating candidate i alone with seed + i yields the same pixels.
    """

    identifier: str = "generator"

    @abstractmethod
    def edit(self, image: RasterImage, instruction: str, n: int = 1, seed: int = 0) -> list[RasterImage]:
        """n candidate edits, dimensions preserved."""


@dataclass
class BackendSuite:
    """The full set of roles a pipeline needs."""

    captioner: Captioner
    detector: GroundingDetector
    segmenter: Segmenter
    eraser: Eraser
    embedder: Embedder
    generator: Generator | None = None

    def identifiers(self) -> dict[str, str]:
        out = {
            "captioner": self.captioner.identifier,
            "detector": self.detector.identifier,
            "segmenter": self.segmenter.identifier,
            "eraser": self.eraser.identifier,
            "embedder": self.embedder.identifier,
        }
        if self.generator is not None:
            out["generator"] = self.generator.identifier
        return out


ROLES = ("captioner", "detector", "segmenter", "eraser", "embedder", "generator")
