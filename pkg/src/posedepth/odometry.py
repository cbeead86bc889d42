"""Trajectory I/O, similarity alignment and odometry error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import PoseSE3, compose

KITTI_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)
SYNTHETIC_LENGTHS = (2, 4, 6, 8)


class PoseParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PoseDataError(ValueError):
    """A pose is not a rigid transform within tolerance."""


class DegenerateGeometryError(ValueError):
    """Point set too degenerate for a unique alignment."""


@dataclass
class Trajectory:
    poses: list[PoseSE3]
    frames: list[int]

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError(f"a trajectory needs at least 2 poses, got {len(self.poses)}")
        if len(self.frames) != len(self.poses):
            raise ValueError("one frame index per pose is required")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("frame indices must be strictly increasing")

    @classmethod
    def from_poses(cls, poses: Sequence[PoseSE3]) -> Trajectory:
        return cls(list(poses), list(range(len(poses))))

    @classmethod
    def from_matrices(cls, mats) -> Trajectory:
        return cls.from_poses([PoseSE3.from_matrix(m) for m in mats])

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.numpy().translation for p in self.poses])

    @property
    def matrices(self) -> np.ndarray:
        return np.array([p.matrix for p in self.poses])


def parse_kitti_poses(text: str, tol: float = 1e-3) -> Trajectory:
    """Parse KITTI pose lines (12 floats, row-major 3x4 [R|t])."""
    poses, frames = [], []
    for n, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 12:
            raise PoseParseError(n, f"expected 12 values, got {len(tokens)}")
        try:
            m = np.array([float(t) for t in tokens]).reshape(3, 4)
        except ValueError as exc:
            raise PoseParseError(n, str(exc)) from exc
        rot = m[:, :3]
        drift = np.abs(rot.T @ rot - np.eye(3)).max()
        if drift > tol or np.linalg.det(rot) <= 0:
            raise PoseDataError(f"line {n}: rotation off orthonormal by {drift:.3g}")
        u, _, vt = np.linalg.svd(rot)
        poses.append(PoseSE3(u @ vt, m[:, 3].copy()))
        frames.append(len(frames))
    return Trajectory(poses, frames)


def serialize_kitti_poses(traj: Trajectory) -> str:
    lines = []
    for p in traj.poses:
        m = p.matrix[:3].reshape(-1)
        lines.append(" ".join(f"{v:.17g}" for v in m))
    return "\n".join(lines) + "\n"


def _as_points(x) -> np.ndarray:
    return x.positions if isinstance(x, Trajectory) else np.asarray(x, dtype=float)


def umeyama_align(estimate, reference, strict: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity (s, R, t) minimising sum ||s R p_i + t - q_i||^2.

    ``strict`` rejects collinear (rank-deficient) configurations; otherwise a
    minimiser is still returned, unique up to rotation about the common line.
    """
    p, q = _as_points(estimate), _as_points(reference)
    if p.shape != q.shape:
        raise ValueError(f"point sets differ in shape {p.shape} vs {q.shape}")
    if len(p) < 3 and strict:
        raise DegenerateGeometryError(f"need at least 3 points, got {len(p)}")
    mu_p, mu_q = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - mu_p, q - mu_q
    var_p = (pc**2).sum() / len(p)
    cov = qc.T @ pc / len(p)
    u, d, vt = np.linalg.svd(cov)
    scale_ref = max(d[0], 1e-300)
    rank = int((d > 1e-12 * scale_ref).sum()) if d[0] > 0 else 0
    if strict and rank < 2:
        raise DegenerateGeometryError(f"cross-covariance has rank {rank}; trajectory is collinear or static")
    if var_p == 0:
        return 1.0, np.eye(3), mu_q - mu_p
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1
    rot = u @ s @ vt
    scale = float(np.trace(np.diag(d) @ s) / var_p)
    trans = mu_q - scale * rot @ mu_p
    return scale, rot, trans


def _aligned_rmse(p: np.ndarray, q: np.ndarray) -> float:
    s, r, t = umeyama_align(p, q, strict=False)
    resid = (s * p @ r.T + t) - q
    return float(np.sqrt((resid**2).sum(axis=1).mean()))


def ate(estimate, reference, alignment_mode: str = "snippet", window: int = 5) -> float:
    """Absolute trajectory error in meters.

    ``snippet``: mean over every overlapping ``window``-frame snippet of the
    RMSE after a per-snippet similarity alignment.  ``full``: RMSE after one
    similarity alignment of the whole trajectory.
    """
    p, q = _as_points(estimate), _as_points(reference)
    if p.shape != q.shape:
        raise ValueError(f"trajectories differ in length {len(p)} vs {len(q)}")
    if alignment_mode == "full":
        return _aligned_rmse(p, q)
    if alignment_mode != "snippet":
        raise ValueError(f"unknown alignment mode {alignment_mode!r}")
    if len(p) < window:
        raise ValueError(f"snippet ATE needs at least {window} frames, got {len(p)}")
    errs = [_aligned_rmse(p[i:i + window], q[i:i + window]) for i in range(len(p) - window + 1)]
    return float(np.mean(errs))


def path_distances(traj) -> np.ndarray:
    pos = _as_points(traj)
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])


@dataclass
class SegmentError:
    first: int
    last: int
    length: float
    path: float
    translation: float  # fraction of path length
    rotation: float  # radians per meter


def _rotation_angle(r: np.ndarray) -> float:
    # atan2 keeps precision near zero where arccos of the trace does not
    sin_t = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(sin_t, (np.trace(r) - 1) / 2))


def segment_errors(estimate: Trajectory, reference: Trajectory, lengths=KITTI_LENGTHS,
                   step: int = 10) -> list[SegmentError]:
    """Relative pose errors over all sub-paths of the given lengths.

    Start frames are taken every ``step`` frames; a segment ends at the first
    frame whose path distance exceeds the start's by more than the length.
    Errors are normalised by the reference path length actually travelled.
    """
    if len(estimate) != len(reference):
        raise ValueError(f"trajectories differ in length {len(estimate)} vs {len(reference)}")
    est = estimate.matrices
    ref = reference.matrices
    dist = path_distances(reference)
    out = []
    for first in range(0, len(ref), step):
        for length in lengths:
            later = np.nonzero(dist > dist[first] + length)[0]
            if len(later) == 0:
                continue
            last = int(later[0])
            delta_ref = np.linalg.inv(ref[first]) @ ref[last]
            delta_est = np.linalg.inv(est[first]) @ est[last]
            err = np.linalg.inv(delta_est) @ delta_ref
            path = dist[last] - dist[first]
            out.append(SegmentError(first, last, float(length), float(path),
                                    float(np.linalg.norm(err[:3, 3]) / path),
                                    _rotation_angle(err[:3, :3]) / path))
    return out


def kitti_relative_errors(estimate: Trajectory, reference: Trajectory, lengths=KITTI_LENGTHS,
                          step: int = 10) -> tuple[float, float] | None:
    """(e_t in %, e_r in deg per 100 m) averaged over segments; None when no segment fits."""
    segs = segment_errors(estimate, reference, lengths, step)
    if not segs:
        return None
    e_t = 100.0 * float(np.mean([s.translation for s in segs]))
    e_r = 100.0 * float(np.degrees(np.mean([s.rotation for s in segs])))
    return e_t, e_r


@dataclass
class OdometryReport:
    e_t: float | None  # percent
    e_r: float | None  # deg / 100 m, reported in the "%" column
    ate: float  # meters

    def key_values(self) -> str:
        def fmt(v):
            return "nan" if v is None else f"{v:.6f}"
        return f"e_t={fmt(self.e_t)}\ne_r={fmt(self.e_r)}\nate={fmt(self.ate)}\n"

    def table(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"
        head = f"{'e_t (%)':>10} {'e_r (deg/100m)':>15} {'ATE (m)':>10}"
        return f"{head}\n{fmt(self.e_t):>10} {fmt(self.e_r):>15} {fmt(self.ate):>10}\n"


def evaluate(estimate: Trajectory, reference: Trajectory, lengths=KITTI_LENGTHS, step: int = 10,
             alignment_mode: str = "snippet") -> OdometryReport:
    rel = kitti_relative_errors(estimate, reference, lengths, step)
    total = path_distances(reference)[-1]
    if rel is None and total > 0:
        # trajectory shorter than every segment length: fall back to half its own path length
        rel = kitti_relative_errors(estimate, reference, (0.5 * total,), step)
    mode = alignment_mode if len(reference) >= 5 else "full"
    err = ate(estimate, reference, mode)
    e_t, e_r = rel if rel is not None else (None, None)
    return OdometryReport(e_t, e_r, err)


def accumulate(relative: Sequence[PoseSE3]) -> Trajectory:
    """Chain frame-to-frame motions (camera k+1 in camera k) into world-from-camera poses."""
    poses = [PoseSE3.identity()]
    for step in relative:
        poses.append(compose(poses[-1], step))
    return Trajectory.from_poses(poses)


def write_svg(path, trajectories: dict[str, np.ndarray], size: int = 400) -> None:
    """Top-down (x, z) polylines, one per trajectory."""
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    pts = np.concatenate([np.asarray(v)[:, [0, 2]] for v in trajectories.values()])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    margin = 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    for n, (name, xyz) in enumerate(trajectories.items()):
        xz = (np.asarray(xyz)[:, [0, 2]] - lo) / span * (size - 2 * margin) + margin
        coords = " ".join(f"{x:.2f},{size - y:.2f}" for x, y in xz)
        parts.append(f'<polyline fill="none" stroke="{colours[n % len(colours)]}" points="{coords}">'
                     f"<title>{name}</title></polyline>")
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
