"""Pixel <-> latent codecs.

The trainer and sampler are written against this interface so the toy
pixel-space setup and a learned autoencoder slot into the same machinery.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
import torch

from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument


class LatentCodec(ABC):
    """Maps images to latent tensors and back.

    encode returns (C, h, w) float32; decode accepts the same and returns an
    image.  latent_channels and downscale describe the geometry so callers
    can size latents without encoding anything.
    """

    name: str = "codec"
    latent_channels: int = 3
    downscale: int = 1

    @abstractmethod
    def encode(self, image: RasterImage) -> torch.Tensor: ...

    @abstractmethod
    def decode(self, latent: torch.Tensor) -> RasterImage: ...

    def latent_shape(self, width: int, height: int) -> tuple[int, int, int]:
        if width % self.downscale or height % self.downscale:
            raise InvalidArgument(
                f"image size {(width, height)} not divisible by downscale {self.downscale}"
            )
        return (self.latent_channels, height // self.downscale, width // self.downscale)

    def to_json(self) -> dict:
        return {"name": self.name}


class IdentityCodec(LatentCodec):
    """Latents are the pixels themselves.

    encode is exact (float32 passthrough); decode clamps to [0, 1] so
    slightly out-of-range sampler outputs still form valid images.
    decode(encode(x)) == x bit-exactly for any valid image.
    """

    name = "identity"
    downscale = 1

    def __init__(self, channels: int = 3):
        self.latent_channels = channels

    def encode(self, image: RasterImage) -> torch.Tensor:
        if image.channels != self.latent_channels:
            raise InvalidArgument(
                f"codec expects {self.latent_channels} channels, image has {image.channels}"
            )
        arr = np.transpose(image.data, (2, 0, 1)).copy()
        return torch.from_numpy(arr)

    def decode(self, latent: torch.Tensor) -> RasterImage:
        if latent.ndim != 3 or latent.shape[0] != self.latent_channels:
            raise InvalidArgument(
                f"latent must be ({self.latent_channels}, h, w), got {tuple(latent.shape)}"
            )
        arr = latent.detach().clamp(0.0, 1.0).cpu().numpy()
        return RasterImage(np.transpose(arr, (1, 2, 0)))


class CenteredCodec(LatentCodec):
    """Latents are pixels remapped to [-1, 1].

    Zero-mean latents double the signal amplitude relative to unit noise,
    which strengthens the learning signal for conditioning pathways at high
    noise levels.  decode clamps to the valid range before mapping back, so
    decode(encode(x)) == x for any in-range image up to float32 rounding.
    """

    name = "centered"
    downscale = 1

    def __init__(self, channels: int = 3):
        self.latent_channels = channels

    def encode(self, image: RasterImage) -> torch.Tensor:
        if image.channels != self.latent_channels:
            raise InvalidArgument(
                f"codec expects {self.latent_channels} channels, image has {image.channels}"
            )
        arr = np.transpose(image.data, (2, 0, 1)) * 2.0 - 1.0
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))

    def decode(self, latent: torch.Tensor) -> RasterImage:
        if latent.ndim != 3 or latent.shape[0] != self.latent_channels:
            raise InvalidArgument(
                f"latent must be ({self.latent_channels}, h, w), got {tuple(latent.shape)}"
            )
        arr = (latent.detach().clamp(-1.0, 1.0).cpu().numpy() + 1.0) * 0.5
        return RasterImage(np.transpose(arr, (1, 2, 0)).astype(np.float32))


_CODECS = {"identity": IdentityCodec, "centered": CenteredCodec}


def codec_from_json(doc: dict) -> LatentCodec:
    name = doc.get("name", "identity")
    cls = _CODECS.get(name)
    if cls is None:
        raise InvalidArgument(f"unknown codec {name!r}")
    return cls()
