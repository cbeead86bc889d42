"""Positional clue aggregation: flow, absolute positions and 3-D points to embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .feature_flow import FlowField
from .geometry import PointCloud
from .nn import Conv2d, Module
from .tensor import DimensionError, Tensor


@dataclass
class PositionalEmbedding:
    values: Tensor  # [e, h, w]


def normalize_unit_range(x) -> Tensor:
    """Per-channel min-max map to [0, 1]; axis 0 is the channel axis.

    A 1-D input is a single channel.  Constant channels map to 0.
    """
    x = T.as_tensor(x)
    if x.ndim <= 1:
        return normalize_unit_range(x.reshape(1, -1)).reshape(x.shape)
    axes = tuple(range(1, x.ndim))
    lo = x.min(axis=axes, keepdims=True)
    hi = x.max(axis=axes, keepdims=True)
    span = hi - lo
    flat = span.data > 0
    denom = span * Tensor(flat) + Tensor(~flat)
    return (x - T.expand(lo, x.shape)) / T.expand(denom, x.shape)


class PositionEncoder(Module):
    """Two 3x3 convolutions with a ReLU between them."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.first = Conv2d(in_ch, out_ch, 3, rng)
        self.second = Conv2d(out_ch, out_ch, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(T.relu(self.first(x)))


class ClueAggregator(Module):
    """Per-stage weights: one encoder shared by flow and absolute positions, one for points."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.shared = PositionEncoder(2, channels, rng)
        self.points = PositionEncoder(3, channels, rng)

    def __call__(self, flow: FlowField, abs_pos, cloud: PointCloud) -> PositionalEmbedding:
        return aggregate(flow, abs_pos, cloud, self)


def _channels_first(x: Tensor) -> Tensor:
    return T.transpose(x, (2, 0, 1))


def aggregate(flow: FlowField, abs_pos, cloud: PointCloud, weights: ClueAggregator) -> PositionalEmbedding:
    """C * (f(S_r; shared) + f(S_a; shared)) + f(P; points)."""
    abs_pos = T.as_tensor(abs_pos)
    shapes = {"flow": flow.flow.shape[:2], "confidence": flow.confidence.shape[:2],
              "positions": abs_pos.shape[:2], "points": cloud.points.shape[:2]}
    if len(set(shapes.values())) != 1:
        raise DimensionError(f"aggregate: spatial shapes differ {shapes}")
    s_r = normalize_unit_range(_channels_first(flow.flow))
    s_a = normalize_unit_range(_channels_first(abs_pos))
    pts = normalize_unit_range(_channels_first(cloud.points))
    motion = weights.shared(s_r) + weights.shared(s_a)
    gate = _channels_first(flow.confidence)
    gated = T.expand(gate, motion.shape) * motion
    return PositionalEmbedding(gated + weights.points(pts))
