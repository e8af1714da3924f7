"""Raster containers, intensity normalization, file I/O and the depth relation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from PIL import Image

# Largest disparity representable in a uint16 PNG at 1/256 px resolution.
MAX_PNG_DISPARITY = 65535 / 256.0


class PixelPos(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class GrayImage:
    """Single-channel float raster, indexed ``data[y, x]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"GrayImage needs a nonempty 2-D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def crop(self, border: int) -> "GrayImage":
        if border == 0:
            return self
        return GrayImage(self.data[border:-border, border:-border])

    def mirrored(self) -> "GrayImage":
        return GrayImage(self.data[:, ::-1])


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparities plus a validity mask (sparse ground truth, failed WTA)."""

    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"DisparityMap needs a 2-D array, got shape {values.shape}")
        valid = np.ones(values.shape, bool) if self.valid is None else np.asarray(self.valid, bool)
        if valid.shape != values.shape:
            raise ValueError("values and valid mask differ in shape")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def mirrored(self) -> "DisparityMap":
        return DisparityMap(self.values[:, ::-1], self.valid[:, ::-1])


ImageLike = Union[GrayImage, np.ndarray]


def pixels(img: ImageLike) -> np.ndarray:
    """Return the float64 pixel array behind ``img``."""
    if isinstance(img, GrayImage):
        return img.data
    return np.asarray(img, dtype=np.float64)


def depth_from_disparity(d: float, focal: float, baseline: float) -> float:
    """Depth in the baseline's unit for disparity ``d`` and focal length ``focal`` (pixels)."""
    if d <= 0:
        raise ValueError("disparity must be positive; zero disparity means infinite depth")
    if focal <= 0 or baseline <= 0:
        raise ValueError("focal length and baseline must be positive")
    return focal * baseline / d


def normalize_image(img: ImageLike) -> GrayImage:
    """Shift to zero mean and scale to unit population standard deviation.

    A constant image has no spread to scale by and maps to all zeros.
    """
    data = pixels(img)
    std = data.std()
    if std == 0:
        return GrayImage(np.zeros_like(data))
    return GrayImage((data - data.mean()) / std)


def load_image(path: Union[str, Path]) -> GrayImage:
    """Read an 8- or 16-bit grayscale PNG/PGM into [0, 1] intensities."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("RGB", "RGBA", "P", "LA"):
                im = im.convert("L")
                mode = "L"
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    if mode == "L":
        scale = 255.0
    elif mode in ("I;16", "I;16B", "I;16L", "I"):
        scale = 65535.0
    elif mode == "F":
        scale = 1.0
    else:
        raise ValueError(f"unsupported image mode {mode!r} in {path}")
    return GrayImage(arr.astype(np.float64) / scale)


def save_image(path: Union[str, Path], img: ImageLike) -> None:
    """Write [0, 1] intensities as an 8-bit grayscale PNG/PGM."""
    data = np.clip(np.rint(pixels(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def encode_disparity(disp: DisparityMap) -> np.ndarray:
    """KITTI encoding: uint16 of round(d * 256), 0 marks an invalid pixel."""
    vals = disp.values
    bad = disp.valid & ((vals < 0) | (vals > MAX_PNG_DISPARITY) | ~np.isfinite(vals))
    if bad.any():
        raise ValueError(f"disparity outside the encodable range [0, {MAX_PNG_DISPARITY:.3f}]")
    stored = np.where(disp.valid, np.rint(np.where(disp.valid, vals, 0) * 256.0), 0)
    # A valid zero disparity would collide with the invalid sentinel; store the smallest code.
    stored = np.where(disp.valid & (stored == 0), 1, stored)
    return stored.astype(np.uint16)


def decode_disparity(stored: np.ndarray) -> DisparityMap:
    stored = np.asarray(stored)
    valid = stored > 0
    return DisparityMap(np.where(valid, stored / 256.0, 0.0), valid)


def save_disparity_png(path: Union[str, Path], disp: DisparityMap) -> None:
    Image.fromarray(encode_disparity(disp)).save(path, format="PNG")


def load_disparity_png(path: Union[str, Path]) -> DisparityMap:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
                raise ValueError(f"expected a 16-bit single-channel PNG, got mode {im.mode!r}")
            arr = np.asarray(im).astype(np.int64)
    except OSError as exc:
        raise ValueError(f"cannot read disparity file {path}: {exc}") from exc
    except ValueError as exc:
        raise ValueError(f"bad disparity file {path}: {exc}") from exc
    if arr.ndim != 2 or arr.min() < 0 or arr.max() > 65535:
        raise ValueError(f"bad disparity file {path}: values outside uint16")
    return decode_disparity(arr)
