"""Raster image container with lossless PNG round-trips.

Images are stored as float32 arrays in the unit interval for compute, and
converted to uint8 exactly at I/O boundaries.  The uint8 <-> float mapping is
u / 255.0 on the way in and round(f * 255.0) on the way out, which round-trips
every uint8 value bit-exactly.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageOps

from insertkit.errors import InvalidArgument

_ALLOWED_CHANNELS = (1, 3, 4)


@dataclass(frozen=True)
class RasterImage:
    """Immutable (H, W, C) float32 image with values in [0, 1].

    Attributes:
        data: Read-only array, channels one of {1, 3, 4}.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidArgument(f"image array must be (H, W, C), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgument(f"image dimensions must be positive, got {arr.shape}")
        if arr.shape[2] not in _ALLOWED_CHANNELS:
            raise InvalidArgument(f"channel count must be one of {_ALLOWED_CHANNELS}, got {arr.shape[2]}")
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float32) / 255.0
        else:
            arr = arr.astype(np.float32, copy=True)
            if not np.isfinite(arr).all():
                raise InvalidArgument("image values must be finite")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidArgument("float image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height), PIL convention."""
        return (self.width, self.height)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)

    def to_pil(self) -> Image.Image:
        arr = self.to_uint8()
        if self.channels == 1:
            return Image.fromarray(arr[:, :, 0], mode="L")
        mode = "RGB" if self.channels == 3 else "RGBA"
        return Image.fromarray(arr, mode=mode)

    def save_png(self, path: str | Path) -> None:
        self.to_pil().save(str(path), format="PNG")

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        return cls(arr)

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 3) -> "RasterImage":
        return cls(np.zeros((height, width, channels), dtype=np.float32))

    @classmethod
    def full(cls, width: int, height: int, color) -> "RasterImage":
        color = np.asarray(color, dtype=np.float32).reshape(1, 1, -1)
        return cls(np.broadcast_to(color, (height, width, color.shape[2])).copy())

    @classmethod
    def load(cls, path: str | Path) -> "RasterImage":
        """Load a PNG or JPEG file, honoring EXIF orientation."""
        try:
            with Image.open(str(path)) as img:
                return cls._from_pil(img)
        except InvalidArgument:
            raise
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise InvalidArgument(f"cannot decode image file {path}: {exc}") from exc

    @classmethod
    def from_bytes(cls, payload: bytes) -> "RasterImage":
        try:
            with Image.open(io.BytesIO(payload)) as img:
                return cls._from_pil(img)
        except InvalidArgument:
            raise
        except Exception as exc:
            raise InvalidArgument(f"cannot decode image bytes: {exc}") from exc

    @classmethod
    def _from_pil(cls, img: Image.Image) -> "RasterImage":
        img = ImageOps.exif_transpose(img)
        if img.mode not in ("L", "RGB", "RGBA"):
            # palette, 16-bit and exotic modes are normalized to RGB
            img = img.convert("RGB")
        arr = np.asarray(img)
        return cls(arr)


def image_to_b64(image: RasterImage) -> str:
    """Encode as base64 PNG for the wire protocol."""
    return base64.b64encode(image.png_bytes()).decode("ascii")


def b64_to_image(payload: str) -> RasterImage:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise InvalidArgument(f"invalid base64 image payload: {exc}") from exc
    return RasterImage.from_bytes(raw)
