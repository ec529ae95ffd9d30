"""Adapter exposing a trained denoiser through the Generator backend
contract, so the composition engine and the session service can drive a real
model exactly the way they drive mocks or remote endpoints.

Replay contract: candidate i is produced by a fresh sampling run with seed
(seed + i), so any candidate can be regenerated independently of how many
siblings were requested alongside it.
"""

from __future__ import annotations

from pathlib import Path

from insertkit.backends.base import Embedder, Generator
from insertkit.core.image import RasterImage
from insertkit.diffusion.checkpoint import load_checkpoint
from insertkit.diffusion.codec import LatentCodec
from insertkit.diffusion.conditioning import WordSequenceEncoder
from insertkit.diffusion.sampler import SamplerConfig, euler_ancestral_sample
from insertkit.diffusion.schedule import NoiseSchedule
from insertkit.diffusion.unet import ToyDenoiser
from insertkit.errors import InvalidArgument


class DiffusionGenerator(Generator):
    identifier = "diffusion"

    def __init__(
        self,
        model: ToyDenoiser,
        schedule: NoiseSchedule,
        codec: LatentCodec,
        text_encoder: WordSequenceEncoder,
        sampler: SamplerConfig | None = None,
    ):
        self.model = model
        self.schedule = schedule
        self.codec = codec
        self.text_encoder = text_encoder
        self.sampler = sampler or SamplerConfig()
        if text_encoder.dim != model.config.text_dim:
            raise InvalidArgument(
                f"text encoder dim {text_encoder.dim} != model text_dim "
                f"{model.config.text_dim}"
            )

    @classmethod
    def from_checkpoint(
        cls,
        path: str | Path,
        embedder: Embedder,
        sampler: SamplerConfig | None = None,
    ) -> "DiffusionGenerator":
        bundle = load_checkpoint(path)
        return cls(
            model=bundle.model,
            schedule=bundle.schedule,
            codec=bundle.codec,
            text_encoder=WordSequenceEncoder(embedder),
            sampler=sampler,
        )

    def edit(
        self, image: RasterImage, instruction: str, n: int, seed: int
    ) -> list[RasterImage]:
        if n < 1:
            raise InvalidArgument("n must be >= 1")
        if not instruction.strip():
            raise InvalidArgument("instruction must be nonempty")
        text = self.text_encoder.encode(instruction)
        return [
            euler_ancestral_sample(
                self.model,
                image,
                text,
                self.sampler.with_seed(seed + i),
                self.schedule,
                self.codec,
            )
            for i in range(n)
        ]
