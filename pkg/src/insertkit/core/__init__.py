"""Shared primitives: images, masks, normalized boxes."""

from insertkit.core.geometry import BBox, iou, mean_box
from insertkit.core.image import RasterImage, b64_to_image, image_to_b64
from insertkit.core.mask import (
    BinaryMask,
    b64_to_mask,
    composite_outside_mask,
    dilate_mask,
    mask_to_b64,
)

__all__ = [
    "BBox",
    "BinaryMask",
    "RasterImage",
    "composite_outside_mask",
    "dilate_mask",
    "iou",
    "mean_box",
    "image_to_b64",
    "b64_to_image",
    "mask_to_b64",
    "b64_to_mask",
]
