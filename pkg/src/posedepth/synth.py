"""Procedural multi-plane scenes rendered by ray casting, with exact ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3, compose, invert, pose_from_vector

IMAGE_SIZE = (64, 192)


class SceneError(ValueError):
    """The requested camera motion leaves too little of the scene visible."""


def default_intrinsics(h: int = IMAGE_SIZE[0], w: int = IMAGE_SIZE[1]) -> CameraIntrinsics:
    # KITTI-style normalised intrinsics
    return CameraIntrinsics(0.58 * w, 1.92 * h, 0.5 * w, 0.5 * h)


@dataclass
class Plane:
    depth: float
    bounds: tuple[float, float, float, float] | None  # x0, x1, y0, y1 in world meters; None = unbounded
    freqs: np.ndarray  # [n, 2] cycles per meter
    phases: np.ndarray  # [n, 3]
    amps: np.ndarray  # [n, 3]
    base: np.ndarray  # [3]

    def color(self, x: np.ndarray, y: np.ndarray, contrast: float) -> np.ndarray:
        arg = 2 * np.pi * (x[..., None] * self.freqs[:, 0] + y[..., None] * self.freqs[:, 1])
        out = np.empty(x.shape + (3,))
        for ch in range(3):
            out[..., ch] = self.base[ch] + contrast * (self.amps[:, ch] * np.sin(arg + self.phases[:, ch])).sum(-1)
        return out


@dataclass
class Scene:
    planes: list[Plane]
    contrast: float = 1.0


@dataclass
class Snippet:
    """Frames (t-1, t, t+1); the target is the middle frame.

    ``relative_poses`` map target-camera points into the camera of frames
    t-1 and t+1 respectively.
    """

    frames: list[np.ndarray]
    intrinsics: CameraIntrinsics
    depths: list[np.ndarray] | None = None
    relative_poses: list[PoseSE3] | None = None
    camera_poses: list[PoseSE3] | None = None
    scene: Scene | None = field(default=None, repr=False)

    @property
    def target(self) -> np.ndarray:
        return self.frames[1]

    @property
    def references(self) -> list[np.ndarray]:
        return [self.frames[0], self.frames[2]]


def random_scene(rng: np.random.Generator, intrinsics: CameraIntrinsics, n_planes: int | None = None,
                 contrast: float = 1.0) -> Scene:
    """Background plane plus 1-3 bounded fronto-parallel rectangles."""
    n = int(rng.integers(2, 5)) if n_planes is None else n_planes
    if not 1 <= n <= 4:
        raise ValueError(f"scenes use 1-4 planes, got {n}")
    w_px, h_px = 2 * intrinsics.cx, 2 * intrinsics.cy
    depths = np.sort(rng.uniform(2.0, 6.0, n - 1)).tolist() + [float(rng.uniform(9.0, 12.0))]
    planes = []
    for j, z in enumerate(depths):
        half_w = z * w_px / (2 * intrinsics.fx)
        half_h = z * h_px / (2 * intrinsics.fy)
        if j == n - 1:
            bounds = None
        else:
            cx = rng.uniform(-0.6, 0.6) * half_w
            cy = rng.uniform(-0.3, 0.3) * half_h
            bw = rng.uniform(0.25, 0.5) * half_w
            bh = rng.uniform(0.4, 0.8) * half_h
            bounds = (cx - bw, cx + bw, cy - bh, cy + bh)
        n_waves = 4
        # wavelengths between ~6 and ~24 pixels at the plane's depth
        wavelength_px = rng.uniform(6.0, 24.0, n_waves)
        meters_per_px = z / intrinsics.fx
        angles = rng.uniform(0, np.pi, n_waves)
        mags = 1.0 / (wavelength_px * meters_per_px)
        freqs = np.stack([mags * np.cos(angles), mags * np.sin(angles)], axis=-1)
        amps = rng.uniform(0.3, 1.0, (n_waves, 3))
        amps *= 0.4 / amps.sum(axis=0, keepdims=True)
        planes.append(Plane(z, bounds, freqs, rng.uniform(0, 2 * np.pi, (n_waves, 3)), amps,
                            rng.uniform(0.45, 0.55, 3)))
    return Scene(planes, contrast)


def render(scene: Scene, camera: PoseSE3, intrinsics: CameraIntrinsics, size=IMAGE_SIZE,
           min_visible: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one view; ``camera`` maps camera points to world points.

    Returns an image [3,h,w] in [0,1] and the camera-frame depth [h,w].
    """
    h, w = size
    cam = camera.numpy()
    nearest = min(p.depth for p in scene.planes)
    if cam.translation[2] > nearest - 0.2:
        raise SceneError(f"camera at z={cam.translation[2]:.3f} reaches the nearest plane at z={nearest:.3f}")
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    rays_c = np.stack([(xs - intrinsics.cx) / intrinsics.fx, (ys - intrinsics.cy) / intrinsics.fy,
                       np.ones_like(xs)], axis=-1)
    rays_w = rays_c @ cam.rotation.T
    origin = cam.translation
    depth = np.full((h, w), np.inf)
    image = np.zeros((h, w, 3))
    for plane in sorted(scene.planes, key=lambda p: -p.depth):
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (plane.depth - origin[2]) / rays_w[..., 2]
        hit_x = origin[0] + lam * rays_w[..., 0]
        hit_y = origin[1] + lam * rays_w[..., 1]
        hit = np.isfinite(lam) & (lam > 0)
        if plane.bounds is not None:
            x0, x1, y0, y1 = plane.bounds
            hit &= (hit_x >= x0) & (hit_x <= x1) & (hit_y >= y0) & (hit_y <= y1)
        closer = hit & (lam < depth)
        depth[closer] = lam[closer]
        image[closer] = plane.color(hit_x[closer], hit_y[closer], scene.contrast)
    visible = np.isfinite(depth)
    if visible.mean() < min_visible:
        raise SceneError(f"only {visible.mean():.0%} of the view sees the scene")
    depth[~visible] = scene.planes[-1].depth
    return np.clip(image, 0.0, 1.0).transpose(2, 0, 1), depth


def synth_scene(seed: int, motion_spec, size=IMAGE_SIZE, intrinsics: CameraIntrinsics | None = None,
                n_planes: int | None = None, contrast: float = 1.0, scene: Scene | None = None) -> Snippet:
    """Render frames t-1, t, t+1 with the middle camera at the origin.

    ``motion_spec`` is a 6-vector (axis-angle, translation) giving the camera
    motion per step, or a pair of them for the two steps: the camera at t+1
    sits at ``motion`` in the frame of camera t.
    """
    k = intrinsics or default_intrinsics(*size)
    motion = np.asarray(motion_spec, dtype=float)
    steps = [motion.reshape(6)] * 2 if motion.size == 6 else list(motion.reshape(2, 6))
    rng = np.random.default_rng(seed)
    scene = scene or random_scene(rng, k, n_planes, contrast)
    m_prev, m_next = pose_from_vector(steps[0]), pose_from_vector(steps[1])
    cameras = [invert(m_prev), PoseSE3.identity(), m_next]
    frames, depths = [], []
    for cam in cameras:
        img, dep = render(scene, cam, k, size)
        frames.append(img.astype(np.float32))
        depths.append(dep.astype(np.float32))
    rel = [compose(invert(cameras[0]), cameras[1]), compose(invert(cameras[2]), cameras[1])]
    return Snippet(frames, k, depths, rel, cameras, scene)


def ground_truth_flow(snippet: Snippet, ref: int = 1) -> np.ndarray:
    """Pixel displacement [h,w,2] of target pixels into reference ``ref`` (0: t-1, 1: t+1)."""
    k = snippet.intrinsics
    depth = snippet.depths[1].astype(float)
    h, w = depth.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    pts = np.stack([(xs - k.cx) / k.fx * depth, (ys - k.cy) / k.fy * depth, depth], axis=-1)
    pose = snippet.relative_poses[ref].numpy()
    moved = pts @ pose.rotation.T + pose.translation
    u = k.fx * moved[..., 0] / moved[..., 2] + k.cx
    v = k.fy * moved[..., 1] / moved[..., 2] + k.cy
    return np.stack([u - xs, v - ys], axis=-1)


def random_motion(rng: np.random.Generator, max_translation: float = 0.3, max_rotation: float = 0.01) -> np.ndarray:
    """Driving-like per-step motion: mostly forward, with bounded lateral and vertical drift."""
    direction = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1), 1.0])
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0.5, 1.0) * max_translation
    r = rng.uniform(-max_rotation, max_rotation, 3)
    return np.concatenate([r, t])


def render_sequence(seed: int, motion_spec, n_frames: int, size=IMAGE_SIZE,
                    intrinsics: CameraIntrinsics | None = None, scene: Scene | None = None):
    """Frames along a constant per-step motion starting at the origin.

    Returns (frames, depths, camera poses, intrinsics).
    """
    k = intrinsics or default_intrinsics(*size)
    rng = np.random.default_rng(seed)
    scene = scene or random_scene(rng, k)
    step = pose_from_vector(np.asarray(motion_spec, dtype=float))
    cameras = [PoseSE3.identity()]
    for _ in range(n_frames - 1):
        cameras.append(compose(cameras[-1], step))
    frames, depths = [], []
    for cam in cameras:
        img, dep = render(scene, cam, k, size)
        frames.append(img.astype(np.float32))
        depths.append(dep.astype(np.float32))
    return frames, depths, cameras, k
