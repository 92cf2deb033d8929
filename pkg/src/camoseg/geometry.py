"""Boxes, points, feature grids and masks shared by every stage.

All coordinates are normalized to [0, 1] with the origin at the top-left
corner. Pixel units only appear at service boundaries.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"box coordinates must lie in [0, 1]: {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate or inverted box: {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def to_pixels(self, width: int, height: int) -> tuple[float, float, float, float]:
        return (self.x1 * width, self.y1 * height, self.x2 * width, self.y2 * height)


FULL_FRAME = BoundingBox(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class ImagePoint:
    x: float
    y: float
    label: str = "positive"

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"point outside the unit square: ({self.x}, {self.y})")
        if self.label not in ("positive", "negative"):
            raise ValueError(f"unknown point label {self.label!r}")

    def to_pixels(self, width: int, height: int) -> tuple[float, float]:
        return (self.x * width, self.y * height)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense H' x W' x D embedding grid.

    ``data`` is stored as a read-only float array of shape (H', W', D).
    """

    data: np.ndarray
    patch_size: int = 14

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"feature data must be (H, W, D) with every axis >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map contains non-finite values")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.patch_size == other.patch_size and np.array_equal(self.data, other.data)

    __hash__ = None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SoftMask:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("soft mask values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def empty(cls, height: int, width: int) -> "SoftMask":
        return cls(np.zeros((height, width)))

    def __eq__(self, other):
        if not isinstance(other, SoftMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "values", _readonly(arr.astype(bool)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def area(self) -> int:
        return int(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


def bbox_center(b: BoundingBox) -> ImagePoint:
    return ImagePoint((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2)


def point_to_cell(p: ImagePoint, fm: FeatureMap) -> tuple[int, int]:
    row = min(max(math.floor(p.y * fm.height), 0), fm.height - 1)
    col = min(max(math.floor(p.x * fm.width), 0), fm.width - 1)
    return row, col


def cell_to_point(row: int, col: int, fm: FeatureMap) -> ImagePoint:
    """Center of a grid cell, in normalized image coordinates."""
    if not (0 <= row < fm.height and 0 <= col < fm.width):
        raise IndexError(f"cell ({row}, {col}) outside {fm.height}x{fm.width} grid")
    return ImagePoint((col + 0.5) / fm.width, (row + 0.5) / fm.height)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a.values, b.values).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.values, b.values).sum() / union)


# --- PNG serialization -------------------------------------------------------

def mask_to_png(mask: SoftMask | BinaryMask) -> bytes:
    """Encode as 8-bit grayscale PNG (0 background, 255 foreground)."""
    if isinstance(mask, BinaryMask):
        arr = mask.values.astype(np.uint8) * 255
    else:
        arr = np.round(mask.values * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _open_gray(source) -> np.ndarray:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    with Image.open(source) as im:
        im.load()
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def soft_mask_from_png(source) -> SoftMask:
    return SoftMask(_open_gray(source).astype(np.float64) / 255.0)


def binary_mask_from_png(source, threshold: int = 128) -> BinaryMask:
    """Load a ground-truth mask; pixels >= ``threshold`` are foreground."""
    return BinaryMask(_open_gray(source) >= threshold)


def quantize(mask: SoftMask) -> SoftMask:
    """Round a soft mask to the 8-bit levels a PNG can hold."""
    return SoftMask(np.round(mask.values * 255.0) / 255.0)


def resize_soft_mask(mask: SoftMask, height: int, width: int) -> SoftMask:
    """Bilinear resize, used to bring predictions to ground-truth resolution."""
    if mask.shape == (height, width):
        return mask
    im = Image.fromarray(mask.values.astype(np.float32), mode="F")
    out = np.asarray(im.resize((width, height), Image.BILINEAR), dtype=np.float64)
    return SoftMask(np.clip(out, 0.0, 1.0))


# --- images ------------------------------------------------------------------

def load_image(source) -> np.ndarray:
    """Decode an image file (path, bytes or file object) to an RGB uint8 array."""
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    with Image.open(source) as im:
        im.load()
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def image_to_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()
