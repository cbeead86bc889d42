import numpy as np
import pytest

from posedepth.geometry import PoseSE3
from posedepth.synth import (Plane, Scene, SceneError, default_intrinsics, ground_truth_flow, random_motion,
                             render_sequence, synth_scene)


def single_plane(z=6.0):
    rng = np.random.default_rng(0)
    return Scene([Plane(z, None, rng.uniform(0.5, 2, (3, 2)), rng.uniform(0, 6, (3, 3)),
                        np.full((3, 3), 0.1), np.full(3, 0.5))])


def test_zero_motion_identical_frames():
    sn = synth_scene(5, np.zeros(6))
    assert np.array_equal(sn.frames[0], sn.frames[1]) and np.array_equal(sn.frames[1], sn.frames[2])
    for p in sn.relative_poses:
        np.testing.assert_allclose(p.matrix, np.eye(4), atol=1e-12)


def test_snippet_contract():
    sn = synth_scene(1, np.array([0, 0.01, 0, 0.05, 0, 0.2]))
    assert len(sn.frames) == 3 and all(f.shape == (3, 64, 192) for f in sn.frames)
    assert sn.target is sn.frames[1]
    assert all(d.shape == (64, 192) and (d > 0).all() for d in sn.depths)
    assert all(0 <= f.min() and f.max() <= 1 for f in sn.frames)


def test_x_translation_flow_matches_pinhole():
    z, t = 6.0, 0.05
    sn = synth_scene(0, np.array([0, 0, 0, t, 0, 0]), scene=single_plane(z))
    k = sn.intrinsics
    flow = ground_truth_flow(sn, ref=1)
    # camera moves +t in x, so target points sit at x - t in the next camera
    np.testing.assert_allclose(flow[..., 0], -k.fx * t / z, rtol=1e-9)
    np.testing.assert_allclose(flow[..., 1], 0, atol=1e-9)


def test_rendered_image_matches_flow():
    z, t = 6.0, 0.05
    sn = synth_scene(0, np.array([0, 0, 0, t, 0, 0]), scene=single_plane(z))
    k = sn.intrinsics
    shift = k.fx * t / z
    # content at target column x appears at column x - shift in frame t+1
    xs = np.arange(20, 170)
    cols = xs - shift
    lo = np.floor(cols).astype(int)
    frac = cols - lo
    resampled = sn.frames[2][:, :, lo] * (1 - frac) + sn.frames[2][:, :, lo + 1] * frac
    assert np.abs(resampled - sn.frames[1][:, :, xs]).max() < 0.02


def test_depth_edges_follow_plane_bounds():
    sn = synth_scene(2, np.zeros(6), n_planes=2)
    plane = sn.scene.planes[0]
    k = sn.intrinsics
    x0, x1, y0, y1 = plane.bounds
    depth = sn.depths[1]
    inside = np.isclose(depth, plane.depth)
    ys, xs = np.nonzero(inside)
    wx = (xs - k.cx) / k.fx * plane.depth
    wy = (ys - k.cy) / k.fy * plane.depth
    assert (wx >= x0 - 1e-6).all() and (wx <= x1 + 1e-6).all()
    assert (wy >= y0 - 1e-6).all() and (wy <= y1 + 1e-6).all()
    # one pixel outside the box horizontally the depth jumps to another layer
    col = int(np.ceil(x1 * k.fx / plane.depth + k.cx))
    row = int(np.median(ys))
    if col < depth.shape[1]:
        assert not np.isclose(depth[row, col], plane.depth)


def test_plane_count_bounds():
    for seed in range(10):
        assert 2 <= len(synth_scene(seed, np.zeros(6)).scene.planes) <= 4


def test_occluding_motion_raises():
    with pytest.raises(SceneError):
        synth_scene(0, np.array([0, 0, 0, 0, 0, 20.0]))


def test_relative_pose_convention():
    sn = synth_scene(3, np.array([0, 0, 0, 0.05, 0, 0.2]))
    # target->(t+1) moves target points backwards when the camera moves forwards
    assert sn.relative_poses[1].translation[2] < 0 and sn.relative_poses[0].translation[2] > 0


def test_random_motion_is_forward_dominant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = random_motion(rng, 0.3, 0.01)
        t = m[3:]
        assert t[2] > 0 and abs(t[0]) <= 0.3 * t[2] + 1e-12 and np.linalg.norm(t) <= 0.3 + 1e-12
        assert np.abs(m[:3]).max() <= 0.01


def test_render_sequence_poses():
    frames, depths, cams, k = render_sequence(0, np.array([0, 0, 0, 0.1, 0, 0.05]), 5)
    assert len(frames) == len(depths) == len(cams) == 5
    np.testing.assert_allclose(cams[4].translation, [0.4, 0, 0.2], atol=1e-12)
    assert isinstance(cams[0], PoseSE3) and k == default_intrinsics()


def test_synthesis_is_deterministic():
    a = synth_scene(7, np.array([0, 0, 0, 0.1, 0, 0.2]))
    b = synth_scene(7, np.array([0, 0, 0, 0.1, 0, 0.2]))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.frames, b.frames))
