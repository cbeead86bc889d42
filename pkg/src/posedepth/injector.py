"""Gated hierarchical injection of positional embeddings and the pose network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .feature_flow import DEFAULT_WINDOW, FlowField, caffe_forward
from .geometry import POSE_SCALE, CameraIntrinsics, backproject, meshgrid, pooled_depth
from .networks import CHANNELS, Encoder, equivariant_branch, frozen_encoder, semantic_branch
from .nn import Conv2d, Linear, Module
from .positional import ClueAggregator, PositionalEmbedding
from .tensor import DimensionError, Tensor


class GateParameter(Module):
    """gamma = sigmoid(logit); ``forced`` pins gamma to a constant (used for ablations)."""

    def __init__(self, logit: float = 0.0):
        self.logit = Tensor(np.array(logit), requires_grad=True)
        self._forced: float | None = None

    @classmethod
    def fixed(cls, gamma: float) -> GateParameter:
        gate = cls()
        gate._forced = float(gamma)
        return gate

    def gamma(self) -> Tensor:
        if self._forced is not None:
            return Tensor(np.array(self._forced))
        return T.sigmoid(self.logit)


@dataclass
class StageState:
    fused: Tensor
    stage: int


def initial_state(first_semantic: Tensor) -> StageState:
    return StageState(Tensor(np.zeros(first_semantic.shape)), 0)


class StageFusion(Module):
    """f_i: 3x3 conv -> ReLU -> 2x2 average-pool."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv = Conv2d(in_ch, out_ch, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.avg_pool2(T.relu(self.conv(x)))


def gated_sum(f_prev: StageState, f_s: Tensor, f_p: PositionalEmbedding, gate: GateParameter,
              reduce: Conv2d) -> Tensor:
    """gamma * f_c(F_p) + (1 - gamma) * F_s + F_{i-1}."""
    pos = reduce(f_p.values)
    shapes = {"reduced positional": pos.shape, "semantic": f_s.shape, "previous": f_prev.fused.shape}
    if len(set(shapes.values())) != 1:
        raise DimensionError(f"inject_stage: shapes differ {shapes}")
    g = gate.gamma()
    return g * pos + (1.0 - g) * f_s + f_prev.fused


def inject_stage(f_prev: StageState, f_s, f_p: PositionalEmbedding, gate: GateParameter, i: int, k: int,
                 reduce: Conv2d, fuse: StageFusion | None = None) -> StageState:
    total = gated_sum(f_prev, T.as_tensor(f_s), f_p, gate, reduce)
    if i < k:
        if fuse is None:
            raise ValueError(f"stage {i} of {k} needs a fusion block")
        return StageState(fuse(total), i)
    return StageState(total, i)


class PoseDecoder(Module):
    """Global average pool, then MLP c -> 64 -> 32 -> 6, scaled by POSE_SCALE."""

    def __init__(self, in_ch: int, rng: np.random.Generator, hidden=(64, 32)):
        sizes = (in_ch,) + tuple(hidden)
        self.hidden = [Linear(sizes[j], sizes[j + 1], rng) for j in range(len(hidden))]
        self.out = Linear(sizes[-1], 6, rng)
        self.out.weight.data *= 0.1

    def __call__(self, state: StageState) -> Tensor:
        f = state.fused
        x = f.mean(axis=(1, 2)).reshape(1, f.shape[0])
        for layer in self.hidden:
            x = T.relu(layer(x))
        return (self.out(x) * POSE_SCALE).reshape(6)


def decode_pose(decoder: PoseDecoder, state: StageState) -> Tensor:
    return decoder(state)


class PoseNet(Module):
    """Two-branch pose network with feature flow, positional clues and gated injection.

    The predicted 6-vector (axis-angle, translation) maps target-camera points
    into the reference camera.
    """

    def __init__(self, channels=CHANNELS, window: int = DEFAULT_WINDOW, seed: int = 0,
                 frozen_seed: int | None = None):
        rng = np.random.default_rng(seed)
        self.channels = tuple(channels)
        self.window = window
        k = len(self.channels)
        self.semantic = Encoder(6, self.channels, rng)
        self.aggregators = [ClueAggregator(c, rng) for c in self.channels]
        self.reducers = [Conv2d(c, c, 1, rng) for c in self.channels]
        self.gates = [GateParameter() for _ in self.channels]
        self.fusions = [StageFusion(self.channels[i], self.channels[i + 1], rng) for i in range(k - 1)]
        self.decoder = PoseDecoder(self.channels[-1], rng)
        self.equivariant = frozen_encoder(self.channels, seed + 1 if frozen_seed is None else frozen_seed)

    @property
    def k(self) -> int:
        return len(self.channels)

    def positional_embeddings(self, feats_r, feats_t, depth_t, intrinsics: CameraIntrinsics):
        flows: list[FlowField] = []
        embeds: list[PositionalEmbedding] = []
        for i, (fr, ft, agg) in enumerate(zip(feats_r, feats_t, self.aggregators), start=1):
            flow = caffe_forward(ft, fr, self.window)
            h, w = ft.shape[1:]
            depth_i = pooled_depth(depth_t, i)
            if depth_i.shape != (h, w):
                raise DimensionError(f"stage {i}: pooled depth {depth_i.shape} != features {(h, w)}")
            cloud = backproject(depth_i, intrinsics.scaled(0.5**i))
            flows.append(flow)
            embeds.append(agg(flow, meshgrid(h, w), cloud))
        return flows, embeds

    def inject(self, semantic, embeds) -> list[StageState]:
        state = initial_state(semantic[0])
        states = []
        for i in range(1, self.k + 1):
            fuse = self.fusions[i - 1] if i < self.k else None
            state = inject_stage(state, semantic[i - 1], embeds[i - 1], self.gates[i - 1], i, self.k,
                                 self.reducers[i - 1], fuse)
            states.append(state)
        return states

    def forward_features(self, i_r, i_t, feats_r, feats_t, depth_t, intrinsics) -> Tensor:
        semantic = semantic_branch(self.semantic, i_r, i_t)
        _, embeds = self.positional_embeddings(feats_r, feats_t, depth_t, intrinsics)
        states = self.inject(semantic, embeds)
        return self.decoder(states[-1])

    def __call__(self, i_r, i_t, depth_t, intrinsics: CameraIntrinsics) -> Tensor:
        feats_r, feats_t = equivariant_branch(self.equivariant, i_r, i_t)
        return self.forward_features(i_r, i_t, feats_r, feats_t, depth_t, intrinsics)


def posenet_forward(model: PoseNet, i_r, i_t, depth_t, intrinsics: CameraIntrinsics) -> Tensor:
    return model(i_r, i_t, depth_t, intrinsics)
