"""Training set construction: matching and non-matching patch pairs.

For every pixel with known disparity ``d`` the left patch centred at
``(x, y)`` is paired twice with a right patch centred at ``(x - d + o, y)``:
once with a small offset ``o_pos`` (a positive, i.e. good match) and once
with an offset ``o_neg`` whose magnitude lies in ``[N_lo, N_hi]`` (a
negative).

Cache file layout (little-endian)::

    magic   4 bytes  b"SPEX"
    version uint8    1
    n       uint32   patch side
    count   uint64   number of examples
    count records of: left  n*n float32 (row-major)
                      right n*n float32
                      label uint8 (1 = positive / good match, 0 = negative)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .imaging import DisparityMap, ImageLike, PixelPos, pixels

CACHE_MAGIC = b"SPEX"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sBIQ")

POSITIVE = 1
NEGATIVE = 0


@dataclass(frozen=True)
class SamplingParams:
    n: int = 9
    n_lo: int = 4
    n_hi: int = 8
    p_hi: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_lo <= self.n_hi:
            raise ValueError("need 1 <= n_lo <= n_hi")
        if not 0 <= self.p_hi < self.n_lo:
            raise ValueError("need 0 <= p_hi < n_lo so positive and negative offsets are disjoint")
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError("patch side n must be odd and positive")


class TrainingExample(NamedTuple):
    left_patch: np.ndarray
    right_patch: np.ndarray
    label: int


@dataclass
class ExampleSet:
    """Stacked examples: ``left``/``right`` are (N, n, n) float32, ``labels`` (N,) uint8."""

    left: np.ndarray
    right: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return TrainingExample(self.left[idx], self.right[idx], int(self.labels[idx]))
        return ExampleSet(self.left[idx], self.right[idx], self.labels[idx])

    @property
    def patch_size(self) -> int:
        return self.left.shape[1]

    @classmethod
    def from_examples(cls, examples, n: int) -> "ExampleSet":
        if not examples:
            return cls.empty(n)
        return cls(
            np.stack([e.left_patch for e in examples]).astype(np.float32),
            np.stack([e.right_patch for e in examples]).astype(np.float32),
            np.array([e.label for e in examples], dtype=np.uint8),
        )

    @classmethod
    def empty(cls, n: int) -> "ExampleSet":
        return cls(np.zeros((0, n, n), np.float32), np.zeros((0, n, n), np.float32), np.zeros(0, np.uint8))

    @classmethod
    def concat(cls, sets) -> "ExampleSet":
        sets = list(sets)
        return cls(
            np.concatenate([s.left for s in sets]),
            np.concatenate([s.right for s in sets]),
            np.concatenate([s.labels for s in sets]),
        )


def extract_patch(img: ImageLike, center: PixelPos, n: int) -> np.ndarray:
    data = pixels(img)
    x, y = center
    h = n // 2
    if x - h < 0 or y - h < 0 or x + h >= data.shape[1] or y + h >= data.shape[0]:
        raise IndexError(f"{n}x{n} patch at ({x}, {y}) leaves the {data.shape[1]}x{data.shape[0]} image")
    return data[y - h : y + h + 1, x - h : x + h + 1].copy()


def sample_offsets(params: SamplingParams, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(o_pos, o_neg)`` uniformly from their offset sets."""
    o_pos = int(rng.integers(-params.p_hi, params.p_hi + 1))
    magnitude = int(rng.integers(params.n_lo, params.n_hi + 1))
    sign = 1 if rng.integers(0, 2) else -1
    return o_pos, sign * magnitude


def extract_examples(
    left: ImageLike, right: ImageLike, gt: DisparityMap, params: SamplingParams
) -> ExampleSet:
    """One positive and one negative example per usable ground-truth pixel.

    Pixels are visited in row-major order. Fractional disparities are rounded.
    A pixel is skipped when either right patch would leave the image, so the
    two classes always stay balanced.
    """
    L, R = pixels(left), pixels(right)
    if L.shape != R.shape or gt.values.shape != L.shape:
        raise ValueError("left, right and ground truth must share one shape")
    n, h = params.n, params.n // 2
    H, W = L.shape
    rng = np.random.default_rng(params.seed)

    lefts, rights, labels = [], [], []
    ys, xs = np.nonzero(gt.valid)
    for y, x in zip(ys.tolist(), xs.tolist()):
        o_pos, o_neg = sample_offsets(params, rng)
        if y - h < 0 or y + h >= H or x - h < 0 or x + h >= W:
            continue
        d = int(np.rint(gt.values[y, x]))
        xp, xn = x - d + o_pos, x - d + o_neg
        if min(xp, xn) - h < 0 or max(xp, xn) + h >= W:
            continue
        lp = L[y - h : y + h + 1, x - h : x + h + 1]
        lefts += [lp, lp]
        rights += [R[y - h : y + h + 1, xp - h : xp + h + 1], R[y - h : y + h + 1, xn - h : xn + h + 1]]
        labels += [POSITIVE, NEGATIVE]

    if not labels:
        return ExampleSet.empty(n)
    return ExampleSet(
        np.array(lefts, dtype=np.float32),
        np.array(rights, dtype=np.float32),
        np.array(labels, dtype=np.uint8),
    )


def save_examples(path: Union[str, Path], examples: ExampleSet) -> None:
    n = examples.patch_size
    count = len(examples)
    rec = np.dtype([("left", "<f4", (n * n,)), ("right", "<f4", (n * n,)), ("label", "u1")])
    records = np.empty(count, dtype=rec)
    records["left"] = examples.left.reshape(count, -1)
    records["right"] = examples.right.reshape(count, -1)
    records["label"] = examples.labels
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, count))
        fh.write(records.tobytes())


def load_examples(path: Union[str, Path]) -> ExampleSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated example cache")
    magic, version, n, count = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ValueError(f"{path}: not an example cache (magic {magic!r}, version {version})")
    rec = np.dtype([("left", "<f4", (n * n,)), ("right", "<f4", (n * n,)), ("label", "u1")])
    if len(raw) - _HEADER.size != count * rec.itemsize:
        raise ValueError(f"{path}: size does not match {count} examples of side {n}")
    records = np.frombuffer(raw, dtype=rec, offset=_HEADER.size)
    return ExampleSet(
        records["left"].reshape(count, n, n).astype(np.float32),
        records["right"].reshape(count, n, n).astype(np.float32),
        records["label"].astype(np.uint8),
    )
