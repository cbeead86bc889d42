"""File formats: PPM/PGM images, FLOW dumps, weight checkpoints and scene directories."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .geometry import CameraIntrinsics
from .odometry import Trajectory, parse_kitti_poses, serialize_kitti_poses

FLOW_MAGIC = b"FLOW"
CHECKPOINT_MAGIC = b"SCPD"
CHECKPOINT_VERSION = 1


def _read_header(blob: bytes, count: int) -> tuple[list[bytes], int]:
    """Split the first ``count`` whitespace-separated tokens of a netpbm header (comments skipped)."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Binary P6 -> float32 [3,h,w] in [0,1]."""
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_header(blob, 4)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(blob, dtype=dtype, count=w * h * 3, offset=offset)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / maxval).astype(np.float32)


def write_ppm(path, image) -> None:
    img = np.asarray(image.data if isinstance(image, T.Tensor) else image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise T.DimensionError(f"write_ppm expects [3,h,w], got {img.shape}")
    _, h, w = img.shape
    raw = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + raw.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_header(blob, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    data = np.frombuffer(blob, dtype=">u2" if maxval > 255 else "u1", count=w * h, offset=offset)
    return (data.reshape(h, w) / maxval).astype(np.float32)


def write_pgm(path, values) -> None:
    """8-bit P5 from values in [0,1]."""
    arr = np.asarray(values.data if isinstance(values, T.Tensor) else values)
    arr = arr.reshape(arr.shape[0], arr.shape[1])
    h, w = arr.shape
    raw = np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + raw.tobytes())


def write_flow(path, flow) -> None:
    """'FLOW', u32 h, u32 w, then float32 (x, y) pairs in row-major order."""
    arr = np.asarray(flow.data if isinstance(flow, T.Tensor) else flow, dtype="<f4")
    h, w, _ = arr.shape
    Path(path).write_bytes(FLOW_MAGIC + struct.pack("<II", h, w) + arr.tobytes())


def read_flow(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: bad flow magic")
    h, w = struct.unpack_from("<II", blob, 4)
    return np.frombuffer(blob, dtype="<f4", count=h * w * 2, offset=12).reshape(h, w, 2).copy()


def save_checkpoint(path, named: dict[str, np.ndarray]) -> None:
    """'SCPD', u32 version, u32 count, then (u32 name length, utf-8 name, TNSR blob) per entry."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(named))]
    for name in sorted(named):
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + T.dumps(named[name]))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4:pos + 4 + n].decode()
        tensor, pos = T.loads(blob, pos + 4 + n)
        out[name] = tensor.data
    return out


# -- scene directories -------------------------------------------------------

def write_scene(directory, frames, depths, camera_poses, intrinsics: CameraIntrinsics) -> None:
    """Write frames, depths, KITTI poses, intrinsics and a manifest listing them."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    listing = []
    for j, img in enumerate(frames):
        name = f"frame_{j:04d}.ppm"
        write_ppm(d / name, img)
        listing.append(name)
    for j, dep in enumerate(depths):
        name = f"depth_{j:04d}.bin"
        T.save(d / name, dep)
        listing.append(name)
    (d / "poses.txt").write_text(serialize_kitti_poses(Trajectory.from_poses(camera_poses)))
    (d / "intrinsics.txt").write_text(intrinsics.to_text() + "\n")
    listing += ["poses.txt", "intrinsics.txt"]
    (d / "manifest.txt").write_text(f"intrinsics {intrinsics.to_text()}\n" + "\n".join(listing) + "\n")


def read_scene(directory):
    """Return (frames, depths, trajectory, intrinsics) from a scene directory."""
    d = Path(directory)
    lines = [ln.strip() for ln in (d / "manifest.txt").read_text().splitlines() if ln.strip()]
    intrinsics = None
    names = []
    for ln in lines:
        if ln.startswith("intrinsics "):
            intrinsics = CameraIntrinsics.from_text(ln[len("intrinsics "):])
        else:
            names.append(ln)
    if intrinsics is None:
        intrinsics = CameraIntrinsics.from_text((d / "intrinsics.txt").read_text())
    frames = [read_ppm(d / n) for n in names if n.startswith("frame_")]
    depths = [T.load(d / n).data for n in names if n.startswith("depth_")]
    traj = parse_kitti_poses((d / "poses.txt").read_text()) if (d / "poses.txt").exists() else None
    return frames, depths, traj, intrinsics
