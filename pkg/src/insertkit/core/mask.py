"""Binary masks, square dilation and outside-mask compositing."""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument


@dataclass(frozen=True)
class BinaryMask:
    """Immutable (H, W) boolean mask."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise InvalidArgument(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgument(f"mask dimensions must be positive, got {arr.shape}")
        if arr.dtype != bool:
            arr = arr.astype(bool) if arr.dtype.kind in "biu" else arr > 0.5
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def to_uint8(self) -> np.ndarray:
        """Single-channel {0, 255} representation used for PNG persistence."""
        return np.where(self.bits, np.uint8(255), np.uint8(0))

    def save_png(self, path: str | Path) -> None:
        Image.fromarray(self.to_uint8(), mode="L").save(str(path), format="PNG")

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.to_uint8(), mode="L").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def load(cls, path: str | Path) -> "BinaryMask":
        try:
            with Image.open(str(path)) as img:
                arr = np.asarray(img.convert("L"))
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise InvalidArgument(f"cannot decode mask file {path}: {exc}") from exc
        return cls(arr >= 128)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "BinaryMask":
        try:
            with Image.open(io.BytesIO(payload)) as img:
                arr = np.asarray(img.convert("L"))
        except Exception as exc:
            raise InvalidArgument(f"cannot decode mask bytes: {exc}") from exc
        return cls(arr >= 128)


def dilate_mask(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilate with a square structuring element of side 2*radius + 1.

    radius 0 is the identity; negative radii are invalid.
    """
    if not isinstance(radius, (int, np.integer)) or isinstance(radius, bool):
        raise InvalidArgument(f"dilation radius must be an int, got {radius!r}")
    if radius < 0:
        raise InvalidArgument(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or mask.is_empty():
        return mask
    side = 2 * int(radius) + 1
    dilated = ndimage.binary_dilation(mask.bits, structure=np.ones((side, side), dtype=bool))
    return BinaryMask(dilated)


def composite_outside_mask(original: RasterImage, edited: RasterImage, mask: BinaryMask) -> RasterImage:
    """Keep ``edited`` inside the mask and ``original`` outside, bit-exactly.

    All three must share height and width; the images must also share the
    channel count.
    """
    if (original.height, original.width) != (edited.height, edited.width):
        raise InvalidArgument(
            f"image dimensions differ: {(original.height, original.width)} vs {(edited.height, edited.width)}"
        )
    if original.channels != edited.channels:
        raise InvalidArgument(f"channel counts differ: {original.channels} vs {edited.channels}")
    if (mask.height, mask.width) != (original.height, original.width):
        raise InvalidArgument(
            f"mask dimensions {(mask.height, mask.width)} do not match images {(original.height, original.width)}"
        )
    out = np.where(mask.bits[:, :, None], edited.data, original.data)
    return RasterImage(out)


def mask_to_b64(mask: BinaryMask) -> str:
    return base64.b64encode(mask.png_bytes()).decode("ascii")


def b64_to_mask(payload: str) -> BinaryMask:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise InvalidArgument(f"invalid base64 mask payload: {exc}") from exc
    return BinaryMask.from_bytes(raw)
