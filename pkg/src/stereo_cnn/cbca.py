"""Cross-based cost aggregation.

Each pixel grows four arms over neighbours of similar intensity. Its support
region is the union of the horizontal arms of every pixel on its vertical
arm. For disparity ``d`` the left support of ``p`` is intersected with the
right support of ``p - d``; because both regions are built from contiguous
arms, the intersection is again a cross-shaped region whose arm lengths are
the element-wise minima of the two crosses. That makes the average over it
computable exactly with one horizontal and one vertical prefix sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costvolume import CostVolume
from .imaging import ImageLike, PixelPos, pixels


@dataclass(frozen=True)
class CrossArms:
    """Arm lengths in pixels beyond the centre, each ``(H, W)`` int arrays."""

    left: np.ndarray
    right: np.ndarray
    top: np.ndarray
    bottom: np.ndarray

    @property
    def shape(self):
        return self.left.shape

    def mirrored(self) -> "CrossArms":
        return CrossArms(self.right[:, ::-1], self.left[:, ::-1], self.top[:, ::-1], self.bottom[:, ::-1])


def _arm(img: np.ndarray, tau: float, eta: int, dy: int, dx: int) -> np.ndarray:
    H, W = img.shape
    length = np.zeros((H, W), np.int64)
    alive = np.ones((H, W), bool)
    for k in range(1, eta):
        if k * abs(dy) >= H or k * abs(dx) >= W:
            break
        step = np.zeros((H, W), bool)
        ys = slice(max(0, -k * dy), H - max(0, k * dy))
        xs = slice(max(0, -k * dx), W - max(0, k * dx))
        ys_n = slice(ys.start + k * dy, ys.stop + k * dy)
        xs_n = slice(xs.start + k * dx, xs.stop + k * dx)
        step[ys, xs] = np.abs(img[ys, xs] - img[ys_n, xs_n]) < tau
        alive &= step
        length += alive
    return length


def build_crosses(img: ImageLike, tau: float, eta: int) -> CrossArms:
    """Arms extend while ``|I(p) - I(q)| < tau`` and the offset is below ``eta``.

    Both tests are strict, so no arm is longer than ``eta - 1``; arms stop at
    the image border.
    """
    if tau <= 0 or eta < 1:
        raise ValueError("need tau > 0 and eta >= 1")
    data = pixels(img)
    return CrossArms(
        left=_arm(data, tau, eta, 0, -1),
        right=_arm(data, tau, eta, 0, 1),
        top=_arm(data, tau, eta, -1, 0),
        bottom=_arm(data, tau, eta, 1, 0),
    )


def support_region(crosses: CrossArms, p: PixelPos) -> set[PixelPos]:
    x, y = p
    region = set()
    for qy in range(y - int(crosses.top[y, x]), y + int(crosses.bottom[y, x]) + 1):
        for qx in range(x - int(crosses.left[qy, x]), x + int(crosses.right[qy, x]) + 1):
            region.add(PixelPos(qx, qy))
    return region


def combined_support(crossesL: CrossArms, crossesR: CrossArms, p: PixelPos, d: int) -> set[PixelPos]:
    """Pixels ``q`` of the left support of ``p`` whose match ``q - d`` lies in the right support of ``p - d``."""
    x, y = p
    if x - d < 0 or x - d >= crossesR.shape[1]:
        return set()
    right_region = support_region(crossesR, PixelPos(x - d, y))
    return {q for q in support_region(crossesL, p) if PixelPos(q.x - d, q.y) in right_region}


def _gather(prefix: np.ndarray, idx: np.ndarray, axis: int) -> np.ndarray:
    return np.take_along_axis(prefix, idx, axis=axis)


def cbca(volume: CostVolume, crossesL: CrossArms, crossesR: CrossArms, iterations: int = 4) -> CostVolume:
    """Average costs over the combined support region, ``iterations`` times.

    Each round reads the previous round's volume only. Invalid cells are left
    out of every mean and keep their value.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    H, W, D = volume.costs.shape
    if crossesL.shape != (H, W) or crossesR.shape != (H, W):
        raise ValueError("cross arms do not match the volume size")
    costs = volume.costs
    valid = volume.valid
    if iterations == 0:
        return volume.with_costs(costs.copy())

    rows = np.arange(H)[:, None]
    # Per-disparity combined arm lengths, computed once and reused every round.
    arms = []
    for d in range(D):
        if d >= W:
            arms.append(None)
            continue
        sl = np.s_[:, d:]
        shift = np.s_[:, : W - d]
        xs = np.arange(d, W)[None, :]
        hl = np.minimum(crossesL.left[sl], crossesR.left[shift])
        hr = np.minimum(crossesL.right[sl], crossesR.right[shift])
        vt = np.minimum(crossesL.top[sl], crossesR.top[shift])
        vb = np.minimum(crossesL.bottom[sl], crossesR.bottom[shift])
        arms.append((xs - hl, xs + hr + 1, rows - vt, rows + vb + 1))

    for _ in range(iterations):
        out = costs.copy()
        for d in range(D):
            if arms[d] is None:
                continue
            lo_x, hi_x, lo_y, hi_y = arms[d]
            m = valid[:, :, d]
            c = np.where(m, costs[:, :, d], 0.0)
            cx = np.zeros((H, W + 1))
            cx[:, 1:] = np.cumsum(c, axis=1)
            nx = np.zeros((H, W + 1))
            nx[:, 1:] = np.cumsum(m, axis=1)
            row_sum = _gather(cx, hi_x, 1) - _gather(cx, lo_x, 1)
            row_cnt = _gather(nx, hi_x, 1) - _gather(nx, lo_x, 1)
            cy = np.zeros((H + 1, W - d))
            cy[1:] = np.cumsum(row_sum, axis=0)
            ny = np.zeros((H + 1, W - d))
            ny[1:] = np.cumsum(row_cnt, axis=0)
            total = _gather(cy, hi_y, 0) - _gather(cy, lo_y, 0)
            count = _gather(ny, hi_y, 0) - _gather(ny, lo_y, 0)
            upd = m[:, d:] & (count > 0)
            block = out[:, d:, d]
            block[upd] = total[upd] / count[upd]
            out[:, d:, d] = block
        costs = out
    return volume.with_costs(costs)
