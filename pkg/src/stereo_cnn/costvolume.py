"""Initial matching-cost volumes.

A volume is indexed ``costs[y, x, d]`` for the left image as reference;
cell ``(y, x, d)`` compares left pixel ``(x, y)`` with right pixel
``(x - d, y)``. Invalid cells hold ``INVALID_COST``, large enough that
minimisations never pick them while staying finite.

Raw dump layout (little-endian)::

    magic   4 bytes b"SCVL"
    version uint8   1
    height, width, ndisp, border  4 x uint32
    costs   float32 [height, width, ndisp]
    valid   uint8   [height, width, ndisp]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .imaging import ImageLike, pixels
from .neuralnet import NetworkParams, forward_features, head_projections, score_from_projections

INVALID_COST = 1e10

_DUMP_MAGIC = b"SCVL"
_DUMP_HEADER = struct.Struct("<4sB4I")


@dataclass
class CostVolume:
    """Matching costs ``(H, W, d_max + 1)`` with a same-shape validity mask.

    ``border`` is the number of image pixels trimmed from every side, so
    volume column ``x`` is image column ``x + border``.
    """

    costs: np.ndarray
    valid: np.ndarray
    border: int = 0

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.costs.ndim != 3 or self.costs.shape != self.valid.shape:
            raise ValueError("costs and valid must be matching (H, W, D) arrays")

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def d_max(self) -> int:
        return self.costs.shape[2] - 1

    def with_costs(self, costs: np.ndarray) -> "CostVolume":
        return CostVolume(costs, self.valid.copy(), self.border)

    def crop(self, k: int) -> "CostVolume":
        """Trim ``k`` more pixels from every side."""
        if k == 0:
            return self
        return CostVolume(self.costs[k:-k, k:-k], self.valid[k:-k, k:-k], self.border + k)

    def mirrored(self) -> "CostVolume":
        return CostVolume(self.costs[:, ::-1], self.valid[:, ::-1], self.border)


def shift_valid_mask(height: int, width: int, d_max: int) -> np.ndarray:
    """``valid[y, x, d]`` is true where ``0 <= x - d``."""
    x = np.arange(width)[:, None]
    d = np.arange(d_max + 1)[None, :]
    return np.broadcast_to((x - d >= 0)[None], (height, width, d_max + 1)).copy()


def sad_cost_volume(left: ImageLike, right: ImageLike, d_max: int, window: int = 5) -> CostVolume:
    """Sum of absolute differences over a ``window`` x ``window`` box.

    Cells whose box would leave either image are invalid; the volume keeps
    the full image size.
    """
    L, R = pixels(left), pixels(right)
    if L.shape != R.shape:
        raise ValueError("left and right images differ in size")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    H, W = L.shape
    h = window // 2
    costs = np.full((H, W, d_max + 1), INVALID_COST)
    valid = np.zeros((H, W, d_max + 1), bool)
    if H < window:
        return CostVolume(costs, valid)
    for d in range(d_max + 1):
        # Box centres must satisfy h <= x - d and x + h < W.
        x0, x1 = d + h, W - h
        if x0 >= x1:
            continue
        diff = np.abs(L[:, d:] - R[:, : W - d])
        ii = np.zeros((H + 1, W - d + 1))
        ii[1:, 1:] = diff.cumsum(0).cumsum(1)
        box = ii[window:, window:] - ii[:-window, window:] - ii[window:, :-window] + ii[:-window, :-window]
        # box[j, i] covers diff rows j..j+window-1 and diff columns i..i+window-1,
        # centred on image pixel (i + h + d, j + h).
        costs[h : H - h, x0:x1, d] = box
        valid[h : H - h, x0:x1, d] = True
    return CostVolume(costs, valid)


def cnn_cost_volume(params: NetworkParams, left: ImageLike, right: ImageLike, d_max: int) -> CostVolume:
    """Network bad-match probability for every (position, disparity).

    The volume covers the positions where a full patch fits, i.e. the image
    trimmed by ``patch_size // 2`` on every side.
    """
    L, R = pixels(left), pixels(right)
    if L.shape != R.shape:
        raise ValueError("left and right images differ in size")
    featL = forward_features(params, L)
    featR = forward_features(params, R)
    projL, projR = head_projections(params, featL, featR)
    H, W = featL.shape[:2]
    costs = np.full((H, W, d_max + 1), INVALID_COST)
    valid = np.zeros((H, W, d_max + 1), bool)
    for d in range(min(d_max, W - 1) + 1):
        scores, ok = score_from_projections(params, projL, projR, d)
        costs[..., d][ok] = scores[ok]
        valid[..., d] = ok
    return CostVolume(costs, valid, params.arch.border)


def save_volume(path: Union[str, Path], vol: CostVolume) -> None:
    H, W, D = vol.costs.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, 1, H, W, D, vol.border))
        fh.write(np.ascontiguousarray(vol.costs, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(vol.valid, dtype=np.uint8).tobytes())


def load_volume(path: Union[str, Path]) -> CostVolume:
    raw = Path(path).read_bytes()
    magic, version, H, W, D, border = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC or version != 1:
        raise ValueError(f"{path}: not a cost volume dump")
    n = H * W * D
    if len(raw) != _DUMP_HEADER.size + 5 * n:
        raise ValueError(f"{path}: size does not match a {H}x{W}x{D} volume")
    costs = np.frombuffer(raw, "<f4", n, _DUMP_HEADER.size).reshape(H, W, D)
    valid = np.frombuffer(raw, np.uint8, n, _DUMP_HEADER.size + 4 * n).reshape(H, W, D)
    return CostVolume(costs.astype(np.float64), valid.astype(bool), border)
