"""Semiglobal matching along the two horizontal and two vertical directions.

A direction ``r = (dx, dy)`` means the scan visits ``p - r`` before ``p``;
``(1, 0)`` runs left to right, ``(0, 1)`` top to bottom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costvolume import CostVolume
from .imaging import ImageLike, PixelPos, pixels

DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class SgmParams:
    pi1: float = 1.0
    pi2: float = 32.0
    tau_so: float = 0.0625

    def __post_init__(self):
        if not (self.pi2 >= self.pi1 > 0):
            raise ValueError("need pi2 >= pi1 > 0")


def penalty_rule(d1: float, d2: float, params: SgmParams, vertical: bool) -> tuple[float, float]:
    """(P1, P2) from the left and right intensity steps along the scan."""
    big1, big2 = d1 >= params.tau_so, d2 >= params.tau_so
    if big1 and big2:
        div = 10.0
    elif big1 or big2:
        div = 4.0
    else:
        div = 1.0
    p1, p2 = params.pi1 / div, params.pi2 / div
    if vertical:
        p1 /= 2
    return p1, p2


def adaptive_penalties(
    IL: ImageLike, IR: ImageLike, p: PixelPos, d: int, r: tuple[int, int], params: SgmParams
) -> tuple[float, float]:
    """Penalties for entering disparity ``d`` at ``p`` from ``p - r``.

    Intensity steps that would sample outside an image count as flat.
    """
    L, R = pixels(IL), pixels(IR)
    H, W = L.shape
    x, y = p
    dx, dy = r
    px, py = x - dx, y - dy

    def inside(u, v):
        return 0 <= u < W and 0 <= v < H

    d1 = abs(L[y, x] - L[py, px]) if inside(x, y) and inside(px, py) else 0.0
    d2 = abs(R[y, x - d] - R[py, px - d]) if inside(x - d, y) and inside(px - d, py) else 0.0
    return penalty_rule(d1, d2, params, vertical=dx == 0)


def _shifted(img: np.ndarray, D: int, oy: int, ox: int) -> np.ndarray:
    """``out[y, x, d] = img[y - oy, x - d - ox]``, NaN outside the image."""
    H, W = img.shape
    out = np.full((H, W, D), np.nan)
    for d in range(D):
        sx = d + ox
        ys_dst = slice(max(0, oy), H + min(0, oy))
        ys_src = slice(max(0, -oy), H - max(0, oy))
        if sx >= 0:
            if sx >= W:
                continue
            out[ys_dst, sx:, d] = img[ys_src, : W - sx]
        else:
            if -sx >= W:
                continue
            out[ys_dst, : W + sx, d] = img[ys_src, -sx:]
    return out


def penalty_volumes(IL: ImageLike, IR: ImageLike, D: int, r: tuple[int, int], params: SgmParams):
    """P1 and P2 for every ``(y, x, d)`` for scan direction ``r``."""
    L, R = pixels(IL), pixels(IR)
    dx, dy = r
    d1 = np.abs(_shifted(L, 1, 0, 0) - _shifted(L, 1, dy, dx))[..., :1]
    d2 = np.abs(_shifted(R, D, 0, 0) - _shifted(R, D, dy, dx))
    big1 = np.nan_to_num(d1, nan=0.0) >= params.tau_so
    big2 = np.nan_to_num(d2, nan=0.0) >= params.tau_so
    div = np.where(big1 & big2, 10.0, np.where(big1 | big2, 4.0, 1.0))
    p1 = params.pi1 / div
    p2 = params.pi2 / div
    if dx == 0:
        p1 = p1 / 2
    return p1, p2


def scanline_costs(costs: np.ndarray, p1: np.ndarray, p2: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Run the path-cost recurrence along axis 1 of ``(N, L, D)`` arrays.

    ``p1``/``p2`` give the penalties for entering each ``(n, i, d)``. With
    ``normalize`` the previous step's minimum is subtracted, which only shifts
    every disparity at a pixel by the same amount.
    """
    N, L, D = costs.shape
    p1 = np.broadcast_to(p1, costs.shape)
    p2 = np.broadcast_to(p2, costs.shape)
    out = np.empty_like(costs, dtype=np.float64)
    out[:, 0] = costs[:, 0]
    inf_col = np.full((N, 1), np.inf)
    for i in range(1, L):
        prev = out[:, i - 1]
        m = prev.min(axis=1, keepdims=True)
        down = np.concatenate([inf_col, prev[:, :-1]], axis=1)  # prev[d - 1]
        up = np.concatenate([prev[:, 1:], inf_col], axis=1)  # prev[d + 1]
        best = np.minimum(
            np.minimum(prev, np.minimum(down, up) + p1[:, i]),
            m + p2[:, i],
        )
        out[:, i] = costs[:, i] + best - (m if normalize else 0.0)
    return out


def _to_scan(a: np.ndarray, r: tuple[int, int]) -> np.ndarray:
    """Reorient so the scan runs along axis 1 in increasing order."""
    dx, dy = r
    if dy != 0:
        a = a.transpose(1, 0, 2)
        if dy < 0:
            a = a[:, ::-1]
    elif dx < 0:
        a = a[:, ::-1]
    return a


def _from_scan(a: np.ndarray, r: tuple[int, int]) -> np.ndarray:
    dx, dy = r
    if dy != 0:
        if dy < 0:
            a = a[:, ::-1]
        return a.transpose(1, 0, 2)
    if dx < 0:
        a = a[:, ::-1]
    return a


def direction_cost(
    volume: CostVolume, r: tuple[int, int], IL: ImageLike, IR: ImageLike, params: SgmParams, normalize: bool = True
) -> CostVolume:
    """Path costs for one scan direction; scanline starts keep the input cost."""
    if r not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    L, R = pixels(IL), pixels(IR)
    if L.shape != volume.costs.shape[:2] or R.shape != L.shape:
        raise ValueError("images do not match the volume size")
    p1, p2 = penalty_volumes(L, R, volume.costs.shape[2], r, params)
    res = scanline_costs(
        _to_scan(volume.costs, r),
        _to_scan(np.broadcast_to(p1, volume.costs.shape), r),
        _to_scan(p2, r),
        normalize,
    )
    return volume.with_costs(np.ascontiguousarray(_from_scan(res, r)))


def sgm(
    volume: CostVolume, IL: ImageLike, IR: ImageLike, params: SgmParams = SgmParams(), normalize: bool = True
) -> CostVolume:
    """Mean of the four directional path costs."""
    acc = np.zeros_like(volume.costs)
    for r in DIRECTIONS:
        acc += direction_cost(volume, r, IL, IR, params, normalize).costs
    return volume.with_costs(acc / 4.0)
