"""Stereo disparity from a learned patch-matching cost refined by
cross-based aggregation, semiglobal matching and post-filtering."""

from .imaging import (
    DisparityMap,
    GrayImage,
    PixelPos,
    depth_from_disparity,
    load_disparity_png,
    load_image,
    normalize_image,
    save_disparity_png,
)
from .neuralnet import Architecture, NetworkParams, TrainSchedule, load_model, save_model, sgd_train
from .pipeline import PipelineConfig, evaluate, predict
from .synthetic import make_synthetic_pair

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "DisparityMap",
    "GrayImage",
    "NetworkParams",
    "PipelineConfig",
    "PixelPos",
    "TrainSchedule",
    "depth_from_disparity",
    "evaluate",
    "load_disparity_png",
    "load_image",
    "load_model",
    "make_synthetic_pair",
    "normalize_image",
    "predict",
    "save_disparity_png",
    "save_model",
    "sgd_train",
]
