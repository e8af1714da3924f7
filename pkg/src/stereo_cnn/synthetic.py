"""Random-dot stereo pairs with exact ground truth."""

from __future__ import annotations

from typing import Callable, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import DisparityMap, GrayImage

DisparityFn = Union[Callable[[np.ndarray, np.ndarray], np.ndarray], np.ndarray, int]


def random_dots(rng: np.random.Generator, width: int, height: int, dot_sigma: float = 1.0) -> np.ndarray:
    """White noise blurred to blobs of about ``dot_sigma`` px, stretched to [0, 1]."""
    noise = rng.random((height, width))
    if dot_sigma > 0:
        noise = gaussian_filter(noise, dot_sigma, mode="wrap")
    lo, hi = noise.min(), noise.max()
    return (noise - lo) / (hi - lo) if hi > lo else np.zeros_like(noise)


def make_synthetic_pair(
    seed: int, width: int, height: int, disparity_fn: DisparityFn, dot_sigma: float = 1.0
) -> tuple[GrayImage, GrayImage, DisparityMap]:
    """Build ``(left, right, gt)`` with ``right(x - d(x, y), y) = left(x, y)``.

    ``disparity_fn`` is an integer constant, an (H, W) array, or a callable
    on the pixel grids ``(xs, ys)``. Where several left pixels land on one
    right pixel the larger disparity (the nearer surface) wins; right pixels
    nothing lands on keep independent noise. Left pixels that are hidden in
    the right view, or map outside it, are invalid in ``gt``.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    if callable(disparity_fn):
        disp = np.asarray(disparity_fn(xs, ys))
    else:
        disp = np.broadcast_to(np.asarray(disparity_fn), (height, width))
    disp = np.asarray(disp)
    if disp.shape != (height, width) or np.any(disp < 0) or np.any(disp != np.rint(disp)):
        raise ValueError("disparities must be non-negative integers on the full grid")
    disp = disp.astype(np.int64)

    left = random_dots(rng, width, height, dot_sigma)
    right = random_dots(rng, width, height, dot_sigma)
    owner = np.full((height, width), -1, np.int64)
    tx = xs - disp
    inside = tx >= 0
    # Paint far to near so nearer surfaces overwrite.
    for d in np.unique(disp):
        sel = inside & (disp == d)
        right[ys[sel], tx[sel]] = left[sel]
        owner[ys[sel], tx[sel]] = d

    visible = inside.copy()
    visible[inside] = owner[ys[inside], tx[inside]] == disp[inside]
    gt = DisparityMap(np.where(visible, disp, 0).astype(np.float64), visible)
    return GrayImage(left), GrayImage(right), gt


def two_plane(width: int, height: int, background: int, foreground: int, rect: tuple[int, int, int, int]) -> np.ndarray:
    """Disparity field of a fronto-parallel rectangle ``(x0, y0, x1, y1)`` (exclusive ends) over a plane."""
    x0, y0, x1, y1 = rect
    disp = np.full((height, width), background, np.int64)
    disp[y0:y1, x0:x1] = foreground
    return disp


def random_two_plane_scene(seed: int, width: int = 96, height: int = 96, d_max: int = 12, dot_sigma: float = 1.0):
    """A seeded two-plane random-dot scene with disparities at most ``d_max``."""
    rng = np.random.default_rng([seed, 7919])
    bg = int(rng.integers(0, max(1, d_max // 2)))
    fg = int(rng.integers(bg + 2, d_max + 1))
    sw = int(rng.integers(width // 4, width // 2))
    sh = int(rng.integers(height // 4, height // 2))
    x0 = int(rng.integers(d_max, width - sw - 4))
    y0 = int(rng.integers(4, height - sh - 4))
    disp = two_plane(width, height, bg, fg, (x0, y0, x0 + sw, y0 + sh))
    return make_synthetic_pair(seed, width, height, disp, dot_sigma)
