"""Siamese patch-matching network.

Layout (default sizes in brackets)::

    L1  conv  c x c x 1           -> K maps        [5x5, K=32]   tied
    L2  fully connected over the m x m x K L1 output -> F   [m=5, F=200]  tied
    L3  fully connected F -> F                                    tied
        concat(left L3, right L3)  -> 2F
    L4..  fc_layers fully connected layers of width Fc        [4 x 300]
    L8  Fc -> 2 logits, softmax over (good match, bad match)

ReLU follows every layer but the last. Patches are n x n with
``n = c + m - 1``; no padding and no pooling anywhere.

At full resolution L2 becomes an m x m x K convolution, L3 and the head
become 1 x 1 convolutions. The head's first layer is linear in the
concatenated vector, so it splits into a left and a right projection that
are computed once per image and only shifted per disparity.

Model file layout (little-endian)::

    magic   4 bytes b"SCNN"
    version uint8   1
    arch    6 x uint32: patch_size, conv_size, n_kernels, feat_width, fc_width, fc_layers
    tensors float32, in order W1 b1 W2 b2 ... (shapes implied by arch)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import POSITIVE, ExampleSet
from .imaging import ImageLike, pixels

MODEL_MAGIC = b"SCNN"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sB6I")

GOOD, BAD = 0, 1

# Upper bound on floats materialised at once by the full-resolution L2 unfold.
_UNFOLD_BUDGET = 1 << 24


@dataclass(frozen=True)
class Architecture:
    patch_size: int = 9
    conv_size: int = 5
    n_kernels: int = 32
    feat_width: int = 200
    fc_width: int = 300
    fc_layers: int = 4

    def __post_init__(self):
        if self.conv_size < 1 or self.conv_size > self.patch_size:
            raise ValueError("conv_size must lie in [1, patch_size]")
        if min(self.n_kernels, self.feat_width, self.fc_width, self.fc_layers) < 1:
            raise ValueError("layer widths and fc_layers must be positive")

    @property
    def l2_size(self) -> int:
        return self.patch_size - self.conv_size + 1

    @property
    def border(self) -> int:
        """Pixels lost on each image side by full-resolution inference."""
        return self.patch_size // 2

    def layer_shapes(self) -> list[tuple[int, int]]:
        m, K, F, Fc = self.l2_size, self.n_kernels, self.feat_width, self.fc_width
        shapes = [(K, self.conv_size**2), (F, m * m * K), (F, F), (Fc, 2 * F)]
        shapes += [(Fc, Fc)] * (self.fc_layers - 1)
        shapes.append((2, Fc))
        return shapes


@dataclass
class NetworkParams:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            self.arch, [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def copy(self) -> "NetworkParams":
        return self.astype(self.dtype)

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_params(arch: Architecture, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """He-uniform fan-in initialisation: weights ``U(-a, a)``, ``a = sqrt(6 / fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out_dim, fan_in in arch.layer_shapes():
        a = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(out_dim, fan_in)).astype(dtype))
        biases.append(np.zeros(out_dim, dtype=dtype))
    return NetworkParams(arch, weights, biases)


def _relu(z):
    return np.maximum(z, 0)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_patches(params: NetworkParams, patches: np.ndarray) -> np.ndarray:
    n = params.arch.patch_size
    if patches.ndim == 2:
        patches = patches[None]
    if patches.shape[1:] != (n, n):
        raise ValueError(f"expected {n}x{n} patches, got {patches.shape[1:]}")
    return patches


def _tower_forward(params: NetworkParams, x: np.ndarray):
    """L1-L3 on a stack of patches. Returns the L3 activations and a cache for backprop."""
    arch = params.arch
    c, K = arch.conv_size, arch.n_kernels
    B = x.shape[0]
    cols = sliding_window_view(x, (c, c), axis=(1, 2))
    cols = cols.reshape(B, arch.l2_size, arch.l2_size, c * c)
    (W1, W2, W3), (b1, b2, b3) = params.weights[:3], params.biases[:3]
    a1 = _relu(cols @ W1.T + b1)
    a1f = a1.reshape(B, -1)
    a2 = _relu(a1f @ W2.T + b2)
    a3 = _relu(a2 @ W3.T + b3)
    return a3, (cols, a1, a1f, a2, a3)


def _head_forward(params: NetworkParams, h: np.ndarray):
    acts = [h]
    n = params.n_layers
    for i in range(3, n):
        z = acts[-1] @ params.weights[i].T + params.biases[i]
        acts.append(z if i == n - 1 else _relu(z))
    return acts


def forward_batch(params: NetworkParams, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Class probabilities (B, 2), column 0 = good match, column 1 = bad match."""
    left = _check_patches(params, np.asarray(left, dtype=params.dtype))
    right = _check_patches(params, np.asarray(right, dtype=params.dtype))
    B = left.shape[0]
    a3, _ = _tower_forward(params, np.concatenate([left, right]))
    h = np.concatenate([a3[:B], a3[B:]], axis=1)
    return _softmax(_head_forward(params, h)[-1])


def forward_pair(params: NetworkParams, left_patch: np.ndarray, right_patch: np.ndarray) -> tuple[float, float]:
    """``(p_good, p_bad)`` for one pair of patches."""
    p = forward_batch(params, left_patch, right_patch)[0]
    return float(p[GOOD]), float(p[BAD])


def tower_features(params: NetworkParams, patch: np.ndarray) -> np.ndarray:
    """The L3 feature vector of a single patch."""
    patch = _check_patches(params, np.asarray(patch, dtype=params.dtype))
    return _tower_forward(params, patch)[0][0]


def loss_and_gradient(params: NetworkParams, batch: ExampleSet) -> tuple[float, NetworkParams]:
    """Mean cross-entropy over ``batch`` and its exact gradient.

    Gradients of the tied L1-L3 weights sum the contributions of both towers.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    dt = params.dtype
    arch = params.arch
    left = _check_patches(params, np.asarray(batch.left, dtype=dt))
    right = _check_patches(params, np.asarray(batch.right, dtype=dt))
    target = np.where(np.asarray(batch.labels) == POSITIVE, GOOD, BAD)
    B = left.shape[0]

    a3, (cols, a1, a1f, a2, _) = _tower_forward(params, np.concatenate([left, right]))
    h = np.concatenate([a3[:B], a3[B:]], axis=1)
    acts = _head_forward(params, h)
    probs = _softmax(acts[-1])
    picked = probs[np.arange(B), target]
    loss = float(-np.mean(np.log(picked)))

    n = params.n_layers
    gW = [None] * n
    gb = [None] * n
    delta = probs.copy()
    delta[np.arange(B), target] -= 1
    delta /= B
    for i in range(n - 1, 2, -1):
        gW[i] = delta.T @ acts[i - 3]
        gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 3:
            delta = delta * (acts[i - 3] > 0)

    F = arch.feat_width
    d3 = np.concatenate([delta[:, :F], delta[:, F:]]) * (a3 > 0)
    gW[2] = d3.T @ a2
    gb[2] = d3.sum(axis=0)
    d2 = (d3 @ params.weights[2]) * (a2 > 0)
    gW[1] = d2.T @ a1f
    gb[1] = d2.sum(axis=0)
    d1 = (d2 @ params.weights[1]).reshape(a1.shape) * (a1 > 0)
    K = arch.n_kernels
    gW[0] = d1.reshape(-1, K).T @ cols.reshape(-1, cols.shape[-1])
    gb[0] = d1.reshape(-1, K).sum(axis=0)

    grads = NetworkParams(arch, [g.astype(dt) for g in gW], [g.astype(dt) for g in gb])
    return loss, grads


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 128
    epochs: int = 16
    lr: float = 0.01
    decay_epochs: tuple = (12, 15)
    decay: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if any(e >= self.epochs or e < 1 for e in self.decay_epochs):
            raise ValueError("decay epochs must lie before the final epoch")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``; decays take effect after the listed epochs."""
        return self.lr * self.decay ** sum(1 for e in self.decay_epochs if epoch > e)


def accuracy(params: NetworkParams, examples: ExampleSet, chunk: int = 4096) -> float:
    """Fraction of examples whose most probable class is the labelled one."""
    if len(examples) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(examples), chunk):
        part = examples[s : s + chunk]
        probs = forward_batch(params, part.left, part.right)
        pred_good = probs[:, GOOD] > probs[:, BAD]
        hits += int(np.sum(pred_good == (part.labels == POSITIVE)))
    return hits / len(examples)


def sgd_train(
    examples: ExampleSet,
    schedule: TrainSchedule,
    arch: Architecture = Architecture(),
    init: Optional[NetworkParams] = None,
    held_out: Optional[ExampleSet] = None,
    progress: Optional[Callable[[int, float, float, float], None]] = None,
) -> NetworkParams:
    """Plain minibatch SGD on the cross-entropy loss.

    Examples are shuffled once, up front, with the schedule's seed; a final
    short batch is kept. ``progress(epoch, lr, mean_loss, held_out_acc)`` is
    called after each epoch.
    """
    if len(examples) == 0:
        raise ValueError("no training examples")
    params = init.copy() if init is not None else init_params(arch, schedule.seed)
    if examples.patch_size != params.arch.patch_size:
        raise ValueError(
            f"examples have {examples.patch_size}px patches, network expects {params.arch.patch_size}px"
        )
    order = np.random.default_rng(schedule.seed + 1).permutation(len(examples))
    data = examples[order]
    bs = schedule.batch_size

    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.lr_at(epoch)
        total, seen = 0.0, 0
        for start in range(0, len(data), bs):
            batch = data[start : start + bs]
            loss, grads = loss_and_gradient(params, batch)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            for w, g in zip(params.tensors(), grads.tensors()):
                w -= lr * g
            total += loss * len(batch)
            seen += len(batch)
        if progress is not None:
            acc = accuracy(params, held_out) if held_out is not None else float("nan")
            progress(epoch, lr, total / seen, acc)
    return params


# --- full-resolution inference ------------------------------------------------


def forward_features(params: NetworkParams, img: ImageLike) -> np.ndarray:
    """L3 features for every patch position, shape (H - n + 1, W - n + 1, F).

    Runs in float64 regardless of the stored parameter precision.
    """
    arch = params.arch
    data = pixels(img)
    n, c, m = arch.patch_size, arch.conv_size, arch.l2_size
    H, W = data.shape
    if H < n or W < n:
        raise ValueError(f"image {W}x{H} is smaller than the {n}x{n} patch")
    W1, W2, W3 = (w.astype(np.float64) for w in params.weights[:3])
    b1, b2, b3 = (b.astype(np.float64) for b in params.biases[:3])

    cols = sliding_window_view(data, (c, c)).reshape(H - c + 1, W - c + 1, c * c)
    a1 = _relu(cols @ W1.T + b1)

    H2, W2_ = H - n + 1, W - n + 1
    out = np.empty((H2, W2_, arch.feat_width))
    win = sliding_window_view(a1, (m, m), axis=(0, 1))  # (H2, W2, K, m, m)
    rows = max(1, _UNFOLD_BUDGET // (W2_ * m * m * arch.n_kernels))
    for r0 in range(0, H2, rows):
        block = win[r0 : r0 + rows].transpose(0, 1, 3, 4, 2).reshape(-1, m * m * arch.n_kernels)
        a2 = _relu(block @ W2.T + b2)
        a3 = _relu(a2 @ W3.T + b3)
        out[r0 : r0 + rows] = a3.reshape(-1, W2_, arch.feat_width)
    return out


def head_projections(params: NetworkParams, featL: np.ndarray, featR: np.ndarray):
    """Split the first head layer into per-image left and right projections."""
    F = params.arch.feat_width
    W4 = params.weights[3].astype(np.float64)
    return featL @ W4[:, :F].T, featR @ W4[:, F:].T


def score_from_projections(params: NetworkParams, projL: np.ndarray, projR: np.ndarray, d: int):
    """Bad-match probabilities at disparity ``d`` from precomputed head projections."""
    H, W = projL.shape[:2]
    scores = np.full((H, W), np.nan)
    valid = np.zeros((H, W), bool)
    if d >= W:
        return scores, valid
    valid[:, d:] = True
    h = _relu(projL[:, d:] + projR[:, : W - d] + params.biases[3].astype(np.float64))
    n = params.n_layers
    for i in range(4, n):
        z = h @ params.weights[i].astype(np.float64).T + params.biases[i].astype(np.float64)
        h = z if i == n - 1 else _relu(z)
    scores[:, d:] = _softmax(h)[..., BAD]
    return scores, valid


def score_pair_maps(params: NetworkParams, featL: np.ndarray, featR: np.ndarray, d: int):
    """Per-position ``p_bad`` for left position p against right position p - d.

    Returns ``(scores, valid)``; positions with ``x - d < 0`` are invalid and NaN.
    """
    if featL.shape != featR.shape:
        raise ValueError("feature maps differ in shape")
    projL, projR = head_projections(params, featL, featR)
    return score_from_projections(params, projL, projR, d)


# --- serialization --------------------------------------------------------------


def save_model(path: Union[str, Path], params: NetworkParams) -> None:
    a = params.arch
    with open(path, "wb") as fh:
        fh.write(
            _MODEL_HEADER.pack(
                MODEL_MAGIC, MODEL_VERSION, a.patch_size, a.conv_size, a.n_kernels, a.feat_width, a.fc_width, a.fc_layers
            )
        )
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_model(path: Union[str, Path]) -> NetworkParams:
    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise ValueError(f"{path}: truncated model file")
    magic, version, *dims = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ValueError(f"{path}: not a model file (magic {magic!r}, version {version})")
    arch = Architecture(*dims)
    shapes = arch.layer_shapes()
    expected = sum(o * i + o for o, i in shapes) * 4
    if len(raw) - _MODEL_HEADER.size != expected:
        raise ValueError(f"{path}: payload size does not match the architecture")
    offset = _MODEL_HEADER.size
    weights, biases = [], []
    for o, i in shapes:
        w = np.frombuffer(raw, "<f4", o * i, offset).reshape(o, i)
        offset += w.nbytes
        b = np.frombuffer(raw, "<f4", o, offset)
        offset += b.nbytes
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
    return NetworkParams(arch, weights, biases)
