"""Confidence-aware feature flow from local cross-frame affinity volumes.

Window offsets are centred: a window of size ``d`` spans
``-(d-1)/2 .. +(d-1)/2`` along each axis, so zero flow means no motion.
Flow vectors are stored as ``(dx, dy)`` to line up with :func:`geometry.meshgrid`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

NORM_EPS = 1e-8
DEFAULT_WINDOW = 5


@dataclass
class AffinityVolume:
    values: Tensor  # [h, w, d, d]; values[y, x, j, i] pairs row offset j and column offset i
    window: int


@dataclass
class FlowField:
    flow: Tensor  # [h, w, 2] as (dx, dy) in feature pixels
    confidence: Tensor  # [h, w, 1]


def window_offsets(d: int) -> np.ndarray:
    """[d*d, 2] table of (dx, dy) offsets in row-major window order."""
    r = (d - 1) // 2
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dx.reshape(-1), dy.reshape(-1)], axis=-1).astype(float)


def normalize_channels(features) -> Tensor:
    """Scale each position's channel vector to unit L2 length (zero stays zero)."""
    f = T.as_tensor(features)
    norm = T.sqrt((f * f).sum(axis=0, keepdims=True))
    denom = norm + NORM_EPS
    return f / T.expand(denom, f.shape)


def affinity_volume(target, reference, d: int = DEFAULT_WINDOW) -> AffinityVolume:
    """Cosine similarity of each target feature with its reference neighbourhood."""
    target, reference = T.as_tensor(target), T.as_tensor(reference)
    if target.shape != reference.shape:
        axes = [i for i, (a, b) in enumerate(zip(target.shape, reference.shape)) if a != b]
        raise DimensionError(f"affinity_volume: feature shapes differ on axes {axes}: {target.shape} vs {reference.shape}")
    if target.ndim != 3:
        raise DimensionError(f"affinity_volume: expected [c,h,w] features, got {target.shape}")
    c, h, w = target.shape
    ref_blocks = T.unfold(normalize_channels(reference), d)  # h,w,c,d*d
    tgt = T.transpose(normalize_channels(target), (1, 2, 0)).reshape(h, w, 1, c)
    values = (tgt @ ref_blocks).reshape(h, w, d, d)
    return AffinityVolume(values, d)


def _flat(a: AffinityVolume) -> Tensor:
    h, w, d, _ = a.values.shape
    return a.values.reshape(h, w, d * d)


def hard_argmax_flow(a: AffinityVolume) -> np.ndarray:
    """Offset of the largest affinity per position; ties go to the first row-major cell."""
    flat = _flat(a).data
    best = np.argmax(flat, axis=-1)
    return window_offsets(a.window)[best]


def soft_argmax_flow(a: AffinityVolume) -> Tensor:
    h, w = a.values.shape[:2]
    prob = T.softmax(_flat(a), axis=-1)
    offsets = Tensor(window_offsets(a.window))
    return (prob.reshape(h * w, -1) @ offsets).reshape(h, w, 2)


def confidence(a: AffinityVolume) -> Tensor:
    """max(0, peak affinity) times peak softmax probability, in [0, 1]."""
    flat = _flat(a)
    magnitude = T.relu(flat.max(axis=-1, keepdims=True))
    sharpness = T.softmax(flat, axis=-1).max(axis=-1, keepdims=True)
    return magnitude * sharpness


def caffe_forward(target_feats, reference_feats, d: int = DEFAULT_WINDOW) -> FlowField:
    a = affinity_volume(target_feats, reference_feats, d)
    return FlowField(soft_argmax_flow(a), confidence(a))
