"""Self-supervised training at toy scale and direct pose fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import tensor as T
from .config import RunConfig
from .geometry import PoseSE3, pose_from_vector, warp_reference
from .injector import PoseNet
from .losses import photometric_loss, smoothness_loss
from .networks import DepthNet
from .synth import Snippet, random_motion, synth_scene
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """Loss became non-finite or kept growing."""


@dataclass
class LossReport:
    photometric: float
    smoothness: float
    total: float


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if lr == 0:
                continue
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


@dataclass
class Models:
    posenet: PoseNet
    depthnet: DepthNet

    @classmethod
    def build(cls, config: RunConfig) -> Models:
        pose = PoseNet(config.channels, config.window, seed=config.seed, frozen_seed=config.frozen_seed)
        depth = DepthNet(config.channels, np.random.default_rng(config.seed + 1000))
        return cls(pose, depth)

    def trainable(self) -> list[Tensor]:
        return [p for p in self.posenet.parameters() + self.depthnet.parameters() if p.requires_grad]

    def named_state(self) -> dict[str, np.ndarray]:
        state = {f"pose.{k}": v for k, v in self.posenet.state_dict().items()}
        state.update({f"depth.{k}": v for k, v in self.depthnet.state_dict().items()})
        return state

    def load_named_state(self, state: dict[str, np.ndarray]) -> None:
        self.posenet.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("pose.")})
        self.depthnet.load_state_dict({k[6:]: v for k, v in state.items() if k.startswith("depth.")})


def learning_rate_at(step: int, total: int, base: float) -> float:
    """Base rate, divided by 10 for the final sixth of the schedule."""
    return base * 0.1 if step >= total - total // 6 else base


def predict_poses(models: Models, snippet: Snippet, depth: Tensor | None = None) -> tuple[list[Tensor], Tensor]:
    """Pose vectors target->(t-1) and target->(t+1), plus the target depth."""
    frames = [Tensor(f) for f in snippet.frames]
    if depth is None:
        depth = models.depthnet(frames[1])
    pyramids = models.posenet.equivariant(T.stack(frames, axis=0))
    feats = [[level[j] for level in pyramids] for j in range(3)]
    poses = []
    for ref in (0, 2):
        poses.append(models.posenet.forward_features(frames[ref], frames[1], feats[ref], feats[1],
                                                     depth, snippet.intrinsics))
    return poses, depth


def snippet_loss(models: Models, snippet: Snippet, config: RunConfig):
    poses, depth = predict_poses(models, snippet)
    target = Tensor(snippet.target)
    refs = [Tensor(snippet.frames[0]), Tensor(snippet.frames[2])]
    warped, masks = [], []
    for ref, vec in zip(refs, poses):
        w, m = warp_reference(ref, depth, snippet.intrinsics, vec)
        warped.append(w)
        masks.append(m)
    photo = photometric_loss(target, warped, masks, identity_refs=refs if config.automask else None,
                             ssim_weight=config.ssim_weight)
    smooth = smoothness_loss(depth, target)
    total = photo + smooth * config.smoothness_weight
    return total, photo, smooth, poses, depth


def _diagnostics(**arrays) -> str:
    parts = []
    for name, value in arrays.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        finite = np.isfinite(data)
        peak = np.abs(data[finite]).max() if finite.any() else float("nan")
        parts.append(f"{name}: max|.|={peak:.4g} finite={finite.all()}")
    return "; ".join(parts)


def train_step(snippet: Snippet, models: Models, optimizer: Adam, config: RunConfig,
               lr: float | None = None) -> LossReport:
    optimizer.zero_grad()
    total, photo, smooth, poses, depth = snippet_loss(models, snippet, config)
    if not np.isfinite(total.item()):
        raise TrainingDivergence("non-finite loss; " + _diagnostics(
            photometric=photo, smoothness=smooth, depth=depth, pose_prev=poses[0], pose_next=poses[1]))
    total.backward()
    optimizer.step(lr)
    return LossReport(photo.item(), smooth.item(), total.item())


def training_snippets(config: RunConfig, count: int | None = None, seed_offset: int = 0) -> list[Snippet]:
    """Deterministic synthetic snippets with random motion directions."""
    count = config.train_scenes if count is None else count
    out = []
    for j in range(count):
        seed = config.seed * 100003 + seed_offset + j
        rng = np.random.default_rng(seed)
        motion = random_motion(rng, config.max_translation, config.max_rotation)
        out.append(synth_scene(seed, motion, (config.height, config.width)))
    return out


def heldout_snippets(config: RunConfig, count: int = 16) -> list[Snippet]:
    return training_snippets(config, count, seed_offset=10_000_000)


def translation_direction_errors(models: Models, snippets: list[Snippet]) -> np.ndarray:
    """Angles (degrees) between predicted and true translation for both references."""
    angles = []
    with T.no_grad():
        for sn in snippets:
            poses, _ = predict_poses(models, sn)
            for vec, truth in zip(poses, sn.relative_poses):
                pred = pose_from_vector(vec.data.astype(float)).translation
                true = truth.numpy().translation
                cos = pred @ true / (np.linalg.norm(pred) * np.linalg.norm(true) + 1e-12)
                angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
    return np.array(angles)


def train(config: RunConfig, snippets: list[Snippet] | None = None, models: Models | None = None,
          callback=None) -> tuple[Models, list[LossReport]]:
    config.validate()
    snippets = snippets if snippets is not None else training_snippets(config)
    models = models or Models.build(config)
    optimizer = Adam(models.trainable(), config.learning_rate)
    history = []
    order = np.random.default_rng(config.seed).permutation
    schedule = []
    for step in range(config.steps):
        if not schedule:
            schedule = list(order(len(snippets)))
        sn = snippets[schedule.pop(0)]
        report = train_step(sn, models, optimizer, config,
                            learning_rate_at(step, config.steps, config.learning_rate))
        history.append(report)
        if callback is not None:
            callback(step, report)
        if step % 100 == 0:
            log.info("step %d photometric %.5f smoothness %.5f", step, report.photometric, report.smoothness)
    return models, history


class DivergenceError(RuntimeError):
    """Direct pose fitting kept increasing the loss."""


def direct_pose_fit(snippet: Snippet, iterations: int = 500, ref: int = 1, lr: float = 2e-3,
                    history: list | None = None, patience: int = 50, initial=None) -> PoseSE3:
    """Fit the target->reference pose by Adam on the 6-vector with true depth fixed.

    ``ref`` selects the reference frame: 0 for t-1, 1 for t+1.  ``initial``
    is an optional starting 6-vector (zeros otherwise).
    """
    if snippet.depths is None:
        raise ValueError("direct_pose_fit needs ground-truth depth")
    target = Tensor(snippet.target)
    reference = Tensor(snippet.references[ref])
    depth = Tensor(snippet.depths[1])
    start = np.zeros(6) if initial is None else np.asarray(initial, dtype=float).reshape(6)
    vec = Tensor(start, requires_grad=True)
    opt = Adam([vec], lr)
    previous = np.inf
    rising = 0
    for _ in range(iterations):
        opt.zero_grad()
        warped, mask = warp_reference(reference, depth, snippet.intrinsics, vec)
        loss = photometric_loss(target, [warped], [mask])
        value = loss.item()
        if history is not None:
            history.append(value)
        rising = rising + 1 if value > previous else 0
        if rising >= patience:
            raise DivergenceError(f"loss rose for {rising} consecutive iterations (now {value:.4g})")
        previous = value
        loss.backward()
        opt.step()
    return pose_from_vector(vec.data.astype(float))
