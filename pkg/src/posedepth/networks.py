"""Toy encoders and the depth network."""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import DimensionError, Tensor

CHANNELS = (16, 32, 64, 128)
MIN_DEPTH = 0.1
MAX_DEPTH = 100.0


class EncoderStage(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, frozen: bool = False):
        self.conv_in = Conv2d(in_ch, out_ch, 3, rng, frozen=frozen)
        self.conv_out = Conv2d(out_ch, out_ch, 3, rng, frozen=frozen)

    def __call__(self, x: Tensor) -> Tensor:
        # pooling sits between the two convolutions so stage outputs stay shift-equivariant
        # for input shifts that are multiples of the stage stride
        return T.relu(self.conv_out(T.avg_pool2(T.relu(self.conv_in(x)))))


class Encoder(Module):
    """k stages; stage i output has shape [c_i, H / 2**i, W / 2**i]."""

    def __init__(self, in_ch: int, channels=CHANNELS, rng: np.random.Generator | None = None,
                 frozen: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.frozen = frozen
        widths = (in_ch,) + tuple(channels)
        self.stages = [EncoderStage(widths[i], widths[i + 1], rng, frozen) for i in range(len(channels))]

    def __call__(self, x: Tensor) -> list[Tensor]:
        pyramid = []
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return pyramid


def _check_pair(i_r: Tensor, i_t: Tensor) -> None:
    if i_r.shape != i_t.shape:
        axes = [i for i, (a, b) in enumerate(zip(i_r.shape, i_t.shape)) if a != b]
        raise DimensionError(f"frame shapes differ on axes {axes}: {i_r.shape} vs {i_t.shape}")
    if i_r.ndim != 3 or i_r.shape[0] != 3:
        raise DimensionError(f"frames must be [3,H,W], got {i_r.shape}")


def semantic_branch(encoder: Encoder, i_r, i_t) -> list[Tensor]:
    """Trainable branch on the channel-wise concatenation (reference first)."""
    i_r, i_t = T.as_tensor(i_r), T.as_tensor(i_t)
    _check_pair(i_r, i_t)
    return encoder(T.concat([i_r, i_t], axis=0))


def equivariant_branch(encoder: Encoder, i_r, i_t) -> tuple[list[Tensor], list[Tensor]]:
    """Frozen shared encoder on the batch-wise stack of both frames, split afterwards."""
    i_r, i_t = T.as_tensor(i_r), T.as_tensor(i_t)
    _check_pair(i_r, i_t)
    batch = T.stack([i_r, i_t], axis=0)
    both = encoder(batch)
    return [f[0] for f in both], [f[1] for f in both]


def frozen_encoder(channels=CHANNELS, seed: int = 1) -> Encoder:
    """Seeded fixed-weight encoder for the translation-equivariant branch.

    Kernels are drawn from a Gaussian and orthonormalised across output
    channels where the fan-in allows it.
    """
    rng = np.random.default_rng(seed)
    enc = Encoder(3, channels, rng, frozen=True)
    for _, p in enc.named_parameters():
        if p.ndim == 4:
            o = p.shape[0]
            flat = p.data.reshape(o, -1)
            if flat.shape[1] >= o:
                q, _ = np.linalg.qr(flat.T)
                scale = np.sqrt(2.0)  # keeps activations from shrinking through ReLUs
                p.data = (q.T * scale).reshape(p.shape).astype(p.data.dtype)
    return enc


def weight_digest(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def decode_depth(sigma: Tensor, min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH) -> Tensor:
    """depth = 1 / (sigma (1/min - 1/max) + 1/max)."""
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    return 1.0 / (sigma * (hi - lo) + lo)


class DepthNet(Module):
    """4-down / 4-up U-shaped network with skip connections and a sigmoid head."""

    def __init__(self, channels=CHANNELS, rng: np.random.Generator | None = None, init_depth: float = 5.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = tuple(channels)
        self.enc = [Conv2d(3, c[0], 3, rng)] + [Conv2d(c[i], c[i + 1], 3, rng) for i in range(len(c) - 1)]
        self.bottleneck = Conv2d(c[-1], c[-1], 3, rng)
        # decoder level j upsamples and concatenates the matching encoder output
        ups = []
        cur = c[-1]
        for skip in reversed(c):
            out = max(skip // 2, c[0]) if skip != c[0] else c[0]
            ups.append(Conv2d(cur + skip, out, 3, rng))
            cur = out
        self.dec = ups
        self.head = Conv2d(cur, 1, 3, rng)
        self.head.weight.data *= 0.1
        target = (1.0 / init_depth - 1.0 / MAX_DEPTH) / (1.0 / MIN_DEPTH - 1.0 / MAX_DEPTH)
        self.head.bias.data[:] = np.log(target / (1 - target))

    def sigma(self, image) -> Tensor:
        x = T.as_tensor(image)
        if x.ndim != 3 or x.shape[0] != 3:
            raise DimensionError(f"depthnet expects [3,H,W], got {x.shape}")
        skips = []
        for conv in self.enc:
            x = T.relu(conv(x))
            skips.append(x)
            x = T.avg_pool2(x)
        x = T.relu(self.bottleneck(x))
        for conv, skip in zip(self.dec, reversed(skips)):
            x = T.upsample2(x, "nearest")
            x = T.relu(conv(T.concat([x, skip], axis=0)))
        return T.sigmoid(self.head(x))[0]

    def __call__(self, image) -> Tensor:
        return decode_depth(self.sigma(image))


def depthnet(model: DepthNet, image) -> Tensor:
    return model(image)
