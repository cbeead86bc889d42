"""Pinhole camera, rigid poses, back-projection and photometric warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DomainError, Tensor

POSE_SCALE = 0.01


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> CameraIntrinsics:
        """Intrinsics of the image resampled by ``factor`` (0.5 = half size)."""
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor)

    def to_text(self) -> str:
        return f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r}"

    @classmethod
    def from_text(cls, text: str) -> CameraIntrinsics:
        parts = text.split()
        if len(parts) != 4:
            raise ValueError(f"intrinsics line needs 4 numbers 'fx fy cx cy', got {len(parts)}")
        return cls(*map(float, parts))


@dataclass
class PoseSE3:
    """Rigid transform x -> R x + t.

    The fields are numpy arrays for bookkeeping (trajectories, evaluation) or
    tensors when produced by :func:`pose_from_vector` on a tensor, in which
    case the pose stays on the autodiff tape.
    """

    rotation: np.ndarray | Tensor
    translation: np.ndarray | Tensor

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> PoseSE3:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def numpy(self) -> PoseSE3:
        rot = self.rotation.data if isinstance(self.rotation, Tensor) else self.rotation
        tr = self.translation.data if isinstance(self.translation, Tensor) else self.translation
        return PoseSE3(np.asarray(rot, dtype=float), np.asarray(tr, dtype=float).reshape(3))

    @property
    def matrix(self) -> np.ndarray:
        p = self.numpy()
        m = np.eye(4)
        m[:3, :3] = p.rotation
        m[:3, 3] = p.translation
        return m

    def check(self, tol: float = 1e-6) -> None:
        r = self.numpy().rotation
        if np.abs(r.T @ r - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1) > tol:
            raise ValueError("rotation is not a proper orthonormal matrix")


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """a ∘ b : x -> a(b(x))."""
    a, b = a.numpy(), b.numpy()
    return PoseSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: PoseSE3) -> PoseSE3:
    a = a.numpy()
    rt = a.rotation.T
    return PoseSE3(rt, -rt @ a.translation)


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Rotation matrix of an axis-angle 3-vector (numpy)."""
    v = np.asarray(axis_angle, dtype=float)
    theta = np.linalg.norm(v)
    k = _skew(v)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    return np.eye(3) + np.sin(theta) / theta * k + (1 - np.cos(theta)) / theta**2 * k @ k


def log_rotation(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix."""
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    theta = np.arctan2(0.5 * np.linalg.norm(w), (np.trace(r) - 1) / 2)
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        m = (r + np.eye(3)) / 2
        axis = m[np.argmax(np.diag(m))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2 * np.sin(theta)) * w


def _skew(v) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


# generator mapping v (1x3) to the row-major flattened skew matrix (1x9)
_SKEW = np.zeros((3, 9))
for _col, (_r, _c, _s) in {0: (2, 1, 1), 1: (0, 2, 1), 2: (1, 0, 1)}.items():
    _SKEW[_col, _r * 3 + _c] = _s
    _SKEW[_col, _c * 3 + _r] = -_s


def rotation_from_axis_angle(v: Tensor) -> Tensor:
    """Differentiable Rodrigues map for a 3-element tensor."""
    v = T.as_tensor(v).reshape(1, 3)
    k = (v @ Tensor(_SKEW)).reshape(3, 3)
    k2 = k @ k
    theta_sq = (v * v).sum()
    if theta_sq.item() < 1e-8:
        a = 1.0 - theta_sq / 6.0
        b = 0.5 - theta_sq / 24.0
    else:
        theta = T.sqrt(theta_sq)
        a = T.sin(theta) / theta
        b = (1.0 - T.cos(theta)) / theta_sq
    return Tensor(np.eye(3)) + k * a + k2 * b


def pose_from_vector(v) -> PoseSE3:
    """6-vector (axis-angle, translation) to a pose; differentiable for tensors."""
    if isinstance(v, Tensor):
        if v.size != 6:
            raise T.DimensionError(f"pose vector must have 6 entries, got shape {v.shape}")
        flat = v.reshape(6)
        return PoseSE3(rotation_from_axis_angle(flat[0:3]), flat[3:6])
    v = np.asarray(v, dtype=float).reshape(6)
    return PoseSE3(rodrigues(v[:3]), v[3:].copy())


def vector_from_pose(p: PoseSE3) -> np.ndarray:
    p = p.numpy()
    return np.concatenate([log_rotation(p.rotation), p.translation])


def meshgrid(h: int, w: int) -> Tensor:
    """Absolute pixel positions: entry (y, x) = (x, y)."""
    if h < 1 or w < 1:
        raise ValueError(f"meshgrid needs positive extents, got {h}x{w}")
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return Tensor(np.stack([xs, ys], axis=-1))


@dataclass
class PointCloud:
    points: Tensor  # [h, w, 3], camera frame, meters


def _homogeneous_rays(h: int, w: int, k: CameraIntrinsics) -> np.ndarray:
    grid = meshgrid(h, w).data.astype(float)
    rays = np.empty((h, w, 3))
    rays[..., 0] = (grid[..., 0] - k.cx) / k.fx
    rays[..., 1] = (grid[..., 1] - k.cy) / k.fy
    rays[..., 2] = 1.0
    return rays


def backproject(depth, k: CameraIntrinsics) -> PointCloud:
    """point(y, x) = depth(y, x) * K^-1 (x, y, 1)."""
    depth = T.as_tensor(depth)
    if depth.ndim != 2:
        raise T.DimensionError(f"depth must be [h,w], got {depth.shape}")
    if np.any(depth.data <= 0):
        raise DomainError("backproject: non-positive depth")
    h, w = depth.shape
    rays = Tensor(_homogeneous_rays(h, w, k))
    z = depth.reshape(h, w, 1)
    return PointCloud(rays * z)


def project(points, k: CameraIntrinsics, min_depth: float = 1e-6) -> tuple[Tensor, np.ndarray]:
    """Pixel coordinates [h,w,2] of camera-frame points and an in-front mask."""
    points = T.as_tensor(points)
    z = points[..., 2:3]
    front = z.data[..., 0] > min_depth
    safe_z = z * Tensor(front[..., None]) + Tensor(~front[..., None])
    xy = points[..., 0:2] / safe_z
    shape = points.shape[:2] + (2,)
    scale = Tensor(np.broadcast_to([k.fx, k.fy], shape))
    offset = Tensor(np.broadcast_to([k.cx, k.cy], shape))
    return xy * scale + offset, front


def transform_points(points: Tensor, pose: PoseSE3) -> Tensor:
    """Apply R x + t to an [h,w,3] tensor of points."""
    h, w, _ = points.shape
    rot = T.as_tensor(pose.rotation)
    tr = T.as_tensor(pose.translation).reshape(1, 3)
    flat = points.reshape(h * w, 3) @ T.transpose(rot)
    return (flat + tr.expand(h * w, 3)).reshape(h, w, 3)


def warp_reference(reference_image, target_depth, k: CameraIntrinsics, relative_pose) -> tuple[Tensor, Tensor]:
    """Synthesize the target view from the reference frame.

    ``relative_pose`` maps target-camera points into the reference camera; it
    may be a :class:`PoseSE3` or a 6-element tensor/array (axis-angle,
    translation).  Returns the warped image and a validity mask that is 0 where
    the projection leaves the image or falls behind the reference camera.
    """
    if not isinstance(relative_pose, PoseSE3):
        relative_pose = pose_from_vector(relative_pose)
    cloud = backproject(target_depth, k)
    moved = transform_points(cloud.points, relative_pose)
    pix, front = project(moved, k)
    warped, mask = T.grid_sample(reference_image, pix)
    mask = Tensor(mask.data * front)
    return warped * Tensor(np.broadcast_to(mask.data, warped.shape)), mask


def pooled_depth(depth: Tensor, stage: int) -> Tensor:
    """Average-pool a full-resolution depth map down by 2**stage."""
    out = depth
    for _ in range(stage):
        out = T.avg_pool2(out)
    return out
