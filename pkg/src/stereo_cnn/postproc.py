"""From a refined cost volume to the final disparity map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .costvolume import CostVolume
from .imaging import DisparityMap, ImageLike, pixels

N_RAYS = 16
_SUBPIXEL_EPS = 1e-12


class PixelLabel(IntEnum):
    CORRECT = 0
    MISMATCH = 1
    OCCLUSION = 2


@dataclass(frozen=True)
class FilterParams:
    blur_sigma: float = 5.656
    tau_bf: float = 5.0
    median_window: int = 5
    bf_window: int = 11

    def __post_init__(self):
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        for w in (self.median_window, self.bf_window):
            if w < 1 or w % 2 == 0:
                raise ValueError("filter windows must be odd and positive")


def wta(volume: CostVolume) -> DisparityMap:
    """Lowest-cost disparity per pixel; ties go to the smaller disparity.

    Pixels without any valid disparity come back invalid with value 0.
    """
    masked = np.where(volume.valid, volume.costs, np.inf)
    d = np.argmin(masked, axis=2)
    return DisparityMap(d.astype(np.float64), volume.valid.any(axis=2))


def lr_check(DL: DisparityMap, DR: DisparityMap, d_max: int) -> np.ndarray:
    """Label each left pixel CORRECT, MISMATCH or OCCLUSION (uint8 array).

    CORRECT: its own disparity d lands on a right pixel whose disparity is
    within 1 of d. MISMATCH: some other d in [0, d_max] would. OCCLUSION:
    none does.
    """
    dl = np.rint(DL.values).astype(np.int64)
    dr = DR.values
    if dl.shape != dr.shape:
        raise ValueError("left and right disparity maps differ in size")
    H, W = dl.shape
    xs = np.arange(W)[None, :]
    ys = np.arange(H)[:, None]

    def agrees(d):
        xr = xs - d
        inside = (xr >= 0) & (xr < W)
        target = dr[ys, np.clip(xr, 0, W - 1)]
        return inside & (np.abs(d - target) <= 1)

    correct = agrees(dl) & DL.valid
    other = np.zeros((H, W), bool)
    for d in range(d_max + 1):
        other |= agrees(np.full((H, W), d)) & (dl != d)
    labels = np.full((H, W), PixelLabel.OCCLUSION, np.uint8)
    labels[other] = PixelLabel.MISMATCH
    labels[correct] = PixelLabel.CORRECT
    return labels


def ray_steps(angle_index: int) -> tuple[float, float]:
    a = 2 * math.pi * angle_index / N_RAYS
    return math.cos(a), math.sin(a)


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def _nearest_on_ray(correct: np.ndarray, values: np.ndarray, x: int, y: int, k: int):
    H, W = correct.shape
    cx, cy = ray_steps(k)
    t = 1
    while True:
        qx, qy = _round(x + t * cx), _round(y + t * cy)
        if not (0 <= qx < W and 0 <= qy < H):
            return None
        if correct[qy, qx]:
            return values[qy, qx]
        t += 1


def _row_fill(correct_row: np.ndarray, values_row: np.ndarray, x: int):
    """Nearest correct value to the left, else to the right."""
    left = np.nonzero(correct_row[:x])[0]
    if left.size:
        return values_row[left[-1]]
    right = np.nonzero(correct_row[x + 1 :])[0]
    if right.size:
        return values_row[x + 1 + right[0]]
    return None


def interpolate(D: DisparityMap, labels: np.ndarray) -> DisparityMap:
    """Fill occluded and mismatched pixels from CORRECT ones.

    Occlusions take the nearest correct disparity to the left (background
    side), falling back to the right. Mismatches take the lower median of the
    nearest correct disparity on each of 16 rays; with no ray hit they fall
    back to the occlusion rule.
    """
    labels = np.asarray(labels)
    correct = labels == PixelLabel.CORRECT
    if not correct.any():
        raise ValueError("no CORRECT pixels to interpolate from")
    vals = D.values
    out = vals.copy()
    for y, x in zip(*np.nonzero(~correct)):
        y, x = int(y), int(x)
        fill = None
        if labels[y, x] == PixelLabel.MISMATCH:
            hits = [v for k in range(N_RAYS) if (v := _nearest_on_ray(correct, vals, x, y, k)) is not None]
            if hits:
                hits.sort()
                fill = hits[(len(hits) - 1) // 2]
        if fill is None:
            fill = _row_fill(correct[y], vals[y], x)
        if fill is not None:
            out[y, x] = fill
    return DisparityMap(out, D.valid.copy())


def subpixel(D: DisparityMap, volume: CostVolume) -> DisparityMap:
    """Quadratic refinement ``d - (C+ - C-) / (2 (C+ - 2C + C-))``.

    The integer disparity is kept at d = 0 or d_max, next to invalid cells,
    for a flat or concave triple, and whenever the vertex would move more than
    half a pixel.
    """
    d = np.rint(D.values).astype(np.int64)
    H, W, ndisp = volume.costs.shape
    if d.shape != (H, W):
        raise ValueError("disparity map and volume differ in size")
    out = D.values.astype(np.float64).copy()
    inner = (d > 0) & (d < ndisp - 1)
    dm = np.clip(d - 1, 0, ndisp - 1)
    dc = np.clip(d, 0, ndisp - 1)
    dp = np.clip(d + 1, 0, ndisp - 1)
    yy, xx = np.indices((H, W))
    cm, c0, cp = (volume.costs[yy, xx, k] for k in (dm, dc, dp))
    ok = inner & volume.valid[yy, xx, dm] & volume.valid[yy, xx, dc] & volume.valid[yy, xx, dp]
    denom = cp - 2 * c0 + cm
    ok &= denom > _SUBPIXEL_EPS
    shift = np.zeros((H, W))
    np.divide(cp - cm, 2 * denom, out=shift, where=ok)
    ok &= np.abs(shift) <= 0.5
    out[ok] = d[ok] - shift[ok]
    return DisparityMap(out, D.valid.copy())


def enlarge_borders(D: DisparityMap, target_w: int, target_h: int) -> DisparityMap:
    """Pad symmetrically to ``target_w`` x ``target_h`` by replicating edge pixels."""
    dh, dw = target_h - D.height, target_w - D.width
    if dh < 0 or dw < 0 or dh % 2 or dw % 2:
        raise ValueError(f"cannot grow {D.width}x{D.height} symmetrically to {target_w}x{target_h}")
    pad = ((dh // 2, dh // 2), (dw // 2, dw // 2))
    return DisparityMap(np.pad(D.values, pad, mode="edge"), np.pad(D.valid, pad, mode="edge"))


def _windows(a: np.ndarray, size: int, fill) -> np.ndarray:
    h = size // 2
    padded = np.pad(a, h, mode="constant", constant_values=fill)
    return sliding_window_view(padded, (size, size))


def median_filter(D: DisparityMap, window: int = 5) -> DisparityMap:
    """Median over each window, clipped at the image border."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    win = _windows(D.values, window, np.nan)
    out = np.nanmedian(win.reshape(*D.values.shape, -1), axis=-1)
    return DisparityMap(out, D.valid.copy())


def gaussian_pdf(x, sigma: float):
    return np.exp(-0.5 * (np.asarray(x) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def bilateral_filter(D: DisparityMap, IL: ImageLike, params: FilterParams = FilterParams()) -> DisparityMap:
    """Spatial Gaussian weights, gated to neighbours within ``tau_bf`` in intensity.

    ``IL`` must use the same intensity scale as ``params.tau_bf``. The window
    is clipped at the border; the centre pixel always contributes.
    """
    I = pixels(IL)
    if I.shape != D.values.shape:
        raise ValueError("image and disparity map differ in size")
    H, W = I.shape
    h = params.bf_window // 2
    vals = np.pad(D.values, h, mode="constant")
    inten = np.pad(I, h, mode="constant", constant_values=np.nan)
    num = np.zeros((H, W))
    den = np.zeros((H, W))
    for oy in range(-h, h + 1):
        for ox in range(-h, h + 1):
            g = float(gaussian_pdf(math.hypot(ox, oy), params.blur_sigma))
            q = np.s_[h + oy : h + oy + H, h + ox : h + ox + W]
            with np.errstate(invalid="ignore"):
                w = np.where(np.abs(inten[q] - I) < params.tau_bf, g, 0.0)
            num += w * vals[q]
            den += w
    return DisparityMap(num / den, D.valid.copy())
