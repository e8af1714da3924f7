"""Full prediction path and evaluation.

Stage order for each reference image: matching cost, cross-based
aggregation, semiglobal matching, a second aggregation, winner-take-all.
The left-right check, interpolation, subpixel fit, border enlargement,
median and bilateral filters then run once on the left-reference map.

The right-reference path reuses the left-reference machinery on the
mirrored, swapped pair. Its raw costs are the left-reference costs
re-indexed (right pixel x at disparity d pairs with left pixel x + d), so
the network always sees a genuine left patch in its left slot and runs
only once per image pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cbca import build_crosses, cbca
from .costvolume import INVALID_COST, CostVolume, cnn_cost_volume, sad_cost_volume
from .imaging import DisparityMap, GrayImage, ImageLike, normalize_image, pixels
from .neuralnet import NetworkParams
from .postproc import (
    FilterParams,
    bilateral_filter,
    enlarge_borders,
    interpolate,
    lr_check,
    median_filter,
    subpixel,
    wta,
)
from .sgm import SgmParams, sgm

BACKENDS = ("cnn", "sad")


@dataclass(frozen=True)
class PipelineConfig:
    d_max: int = 228
    backend: str = "cnn"
    sad_window: int = 5
    eta: int = 4
    tau: float = 0.0442
    cbca_iterations: int = 4
    pi1: float = 1.0
    pi2: float = 32.0
    tau_so: float = 0.0625
    blur_sigma: float = 5.656
    tau_bf: float = 5.0
    median_window: int = 5
    bf_window: int = 11
    # tau_bf is in gray levels; raw intensities in [0, 1] are scaled by this first.
    intensity_scale: float = 255.0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.d_max < 0:
            raise ValueError("d_max must be non-negative")
        if self.sad_window < 1 or self.sad_window % 2 == 0:
            raise ValueError("sad_window must be odd and positive")
        if self.tau <= 0 or self.eta < 1:
            raise ValueError("need tau > 0 and eta >= 1")
        if self.cbca_iterations < 0:
            raise ValueError("cbca_iterations must be non-negative")
        self.sgm_params()
        self.filter_params()

    def sgm_params(self) -> SgmParams:
        return SgmParams(self.pi1, self.pi2, self.tau_so)

    def filter_params(self) -> FilterParams:
        return FilterParams(self.blur_sigma, self.tau_bf, self.median_window, self.bf_window)

    def as_dict(self) -> dict:
        return asdict(self)


def _check_pair(left: ImageLike, right: ImageLike):
    L, R = pixels(left), pixels(right)
    if L.shape != R.shape:
        raise ValueError(f"image sizes differ: {L.shape[::-1]} vs {R.shape[::-1]}")
    return L, R


def left_cost_volume(left: ImageLike, right: ImageLike, model: Optional[NetworkParams], config: PipelineConfig) -> CostVolume:
    """Raw left-reference costs, trimmed to the region where every cell can be valid."""
    L, R = _check_pair(left, right)
    if config.backend == "sad":
        return sad_cost_volume(L, R, config.d_max, config.sad_window).crop(config.sad_window // 2)
    if model is None:
        raise ValueError("the cnn backend needs a trained model")
    return cnn_cost_volume(model, normalize_image(L), normalize_image(R), config.d_max)


def right_cost_volume(left_volume: CostVolume) -> CostVolume:
    """Right-reference costs: cell ``(y, x, d)`` is left cell ``(y, x + d, d)``."""
    H, W, D = left_volume.costs.shape
    costs = np.full((H, W, D), INVALID_COST)
    valid = np.zeros((H, W, D), bool)
    for d in range(min(D, W)):
        costs[:, : W - d, d] = left_volume.costs[:, d:, d]
        valid[:, : W - d, d] = left_volume.valid[:, d:, d]
    return CostVolume(costs, valid, left_volume.border)


def refine(volume: CostVolume, ref: np.ndarray, other: np.ndarray, config: PipelineConfig, stages=None, tag=""):
    """Aggregate, run SGM, aggregate again. Returns ``(C_sgm, C_final)``.

    ``ref`` and ``other`` are the raw reference/other images cropped to the volume.
    """
    crosses_ref = build_crosses(ref, config.tau, config.eta)
    crosses_other = build_crosses(other, config.tau, config.eta)
    c1 = cbca(volume, crosses_ref, crosses_other, config.cbca_iterations)
    c_sgm = sgm(c1, ref, other, config.sgm_params())
    c2 = cbca(c_sgm, crosses_ref, crosses_other, config.cbca_iterations)
    if stages is not None:
        stages[f"cost_{tag}"] = volume
        stages[f"cbca1_{tag}"] = c1
        stages[f"sgm_{tag}"] = c_sgm
        stages[f"cbca2_{tag}"] = c2
    return c_sgm, c2


def _crop(a: np.ndarray, b: int) -> np.ndarray:
    return a[b:-b, b:-b] if b else a


def reference_disparities(left: ImageLike, right: ImageLike, model, config: PipelineConfig, stages=None):
    """WTA maps for both references plus the left C_sgm volume, all in volume coordinates."""
    L, R = _check_pair(left, right)
    vol_l = left_cost_volume(L, R, model, config)
    b = vol_l.border
    Lc, Rc = _crop(L, b), _crop(R, b)
    if Lc.size == 0:
        raise ValueError("image too small for the cost volume border")

    sgm_l, final_l = refine(vol_l, Lc, Rc, config, stages, "left")
    DL = wta(final_l)

    # Mirror-swap: the right reference becomes a left reference.
    vol_r = right_cost_volume(vol_l).mirrored()
    _, final_r = refine(vol_r, Rc[:, ::-1], Lc[:, ::-1], config, stages, "right_mirrored")
    DR = wta(final_r).mirrored()
    if stages is not None:
        stages["disp_left"] = DL
        stages["disp_right"] = DR
    return DL, DR, sgm_l


def right_reference_disparity(left: ImageLike, right: ImageLike, model, config: PipelineConfig) -> DisparityMap:
    """Right-reference WTA disparities, enlarged back to the image size."""
    L, _ = _check_pair(left, right)
    _, DR, _ = reference_disparities(left, right, model, config)
    return enlarge_borders(DR, L.shape[1], L.shape[0])


def predict(
    left: ImageLike, right: ImageLike, model: Optional[NetworkParams], config: PipelineConfig, debug: bool = False
):
    """Dense left-reference disparity map for a rectified pair of raw [0, 1] images.

    With ``debug`` the return value is ``(disparity, stages)`` where
    ``stages`` maps stage names to intermediate volumes and maps.
    """
    L, R = _check_pair(left, right)
    H, W = L.shape
    stages = {} if debug else None
    DL, DR, sgm_l = reference_disparities(L, R, model, config, stages)
    labels = lr_check(DL, DR, config.d_max)
    d_int = interpolate(DL, labels)
    d_se = subpixel(d_int, sgm_l)
    big = enlarge_borders(d_se, W, H)
    big = DisparityMap(big.values, np.ones_like(big.valid))
    fp = config.filter_params()
    d_med = median_filter(big, fp.median_window)
    d_bf = bilateral_filter(d_med, L * config.intensity_scale, fp)
    if stages is None:
        return d_bf
    stages.update(labels=labels, interpolated=d_int, subpixel=d_se, enlarged=big, median=d_med, bilateral=d_bf)
    return d_bf, stages


def evaluate(pred: DisparityMap, gt: DisparityMap, threshold: float = 3.0) -> float:
    """Percentage of valid ground-truth pixels where the prediction is off by more than ``threshold``."""
    if pred.values.shape != gt.values.shape:
        raise ValueError("prediction and ground truth differ in size")
    n = int(gt.valid.sum())
    if n == 0:
        raise ValueError("ground truth has no valid pixels")
    wrong = gt.valid & (np.abs(pred.values - gt.values) > threshold)
    return 100.0 * int(wrong.sum()) / n
