import numpy as np
import pytest
from hypothesis import given, strategies as st

from posedepth import tensor as T
from posedepth.geometry import (CameraIntrinsics, PoseSE3, backproject, compose, invert, log_rotation, meshgrid,
                                pose_from_vector, project, rodrigues, vector_from_pose, warp_reference)
from posedepth.losses import photometric_loss
from posedepth.tensor import DomainError, Tensor, gradient_check


def random_pose(rng, scale=1.0):
    return PoseSE3(rodrigues(rng.normal(size=3) * scale), rng.normal(size=3))


def test_meshgrid_examples():
    assert meshgrid(2, 2).data.tolist() == [[[0, 0], [1, 0]], [[0, 1], [1, 1]]]
    assert meshgrid(1, 3).data[0].tolist() == [[0, 0], [1, 0], [2, 0]]
    g = meshgrid(4, 7).data
    assert g[..., 0].max() == 6 and g[..., 1].max() == 3


def test_intrinsics_reject_nonpositive_focal():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0)


def test_intrinsics_text_roundtrip():
    k = CameraIntrinsics(111.36, 122.88, 96.0, 32.0)
    assert CameraIntrinsics.from_text(k.to_text()) == k


def test_backproject_examples():
    pts = backproject(Tensor(np.ones((1, 1))), CameraIntrinsics(1, 1, 0, 0)).points.data
    np.testing.assert_array_equal(pts[0, 0], [0, 0, 1])
    depth = np.full((6, 4), 4.0)
    pts = backproject(Tensor(depth), CameraIntrinsics(2, 2, 1, 1)).points.data
    np.testing.assert_allclose(pts[5, 3], [4, 8, 4])


def test_backproject_linear_in_depth(rng):
    k = CameraIntrinsics(50, 60, 10, 8)
    d = rng.uniform(1, 5, (8, 10))
    a = backproject(Tensor(d), k).points.data
    b = backproject(Tensor(2 * d), k).points.data
    np.testing.assert_allclose(b, 2 * a, rtol=1e-6)
    np.testing.assert_allclose(a[..., 2], d, rtol=1e-6)


def test_backproject_rejects_nonpositive():
    with pytest.raises(DomainError):
        backproject(Tensor(np.zeros((2, 2))), CameraIntrinsics(1, 1, 0, 0))


@given(st.floats(10, 300), st.floats(10, 300), st.floats(-5, 20), st.floats(-5, 20), st.integers(0, 2**31 - 1))
def test_projection_roundtrip(fx, fy, cx, cy, seed):
    k = CameraIntrinsics(fx, fy, cx, cy)
    depth = np.random.default_rng(seed).uniform(0.5, 50, (5, 7))
    with T.precision(np.float64):
        pix, front = project(backproject(Tensor(depth), k).points, k)
    np.testing.assert_allclose(pix.data, meshgrid(5, 7).data, atol=1e-5)
    assert front.all()


def test_rodrigues_quarter_turn():
    r = pose_from_vector(np.array([0, 0, np.pi / 2, 0, 0, 0])).rotation
    np.testing.assert_allclose(r, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


def test_zero_vector_identity():
    p = pose_from_vector(np.zeros(6))
    np.testing.assert_array_equal(p.rotation, np.eye(3))
    np.testing.assert_array_equal(p.translation, np.zeros(3))


def test_small_motion_inverse_by_negation(rng):
    v = rng.normal(size=6) * 1e-3
    # the inverse of (R, t) is (R^T, -R^T t); negating v gives R^T and -t, equal up to second order
    p = compose(pose_from_vector(v), pose_from_vector(-v))
    np.testing.assert_allclose(p.matrix, np.eye(4), atol=1e-5)


def test_tensor_and_numpy_rotation_agree(rng):
    v = rng.normal(size=6)
    with T.precision(np.float64):
        diff = pose_from_vector(Tensor(v)).rotation.data - pose_from_vector(v).rotation
    assert np.abs(diff).max() < 1e-12


def test_tiny_angle_branch_is_smooth():
    with T.precision(np.float64):
        r = pose_from_vector(Tensor(np.array([1e-9, 0, 0, 0, 0, 0]))).rotation.data
    np.testing.assert_allclose(r, rodrigues(np.array([1e-9, 0, 0])), atol=1e-15)


def test_log_rotation_inverts_rodrigues(rng):
    for _ in range(50):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 3.0) / np.linalg.norm(v)
        np.testing.assert_allclose(log_rotation(rodrigues(v)), v, atol=1e-8)


def test_compose_invert_examples(rng):
    p = random_pose(rng)
    q = compose(PoseSE3.identity(), p)
    np.testing.assert_allclose(q.matrix, p.matrix)
    np.testing.assert_allclose(invert(invert(p)).matrix, p.matrix, atol=1e-12)
    np.testing.assert_allclose(compose(p, invert(p)).matrix, np.eye(4), atol=1e-12)
    step = PoseSE3(np.eye(3), np.array([1.0, 0, 0]))
    acc = PoseSE3.identity()
    for _ in range(7):
        acc = compose(acc, step)
    np.testing.assert_allclose(acc.translation, [7, 0, 0])


def test_orthonormality_over_many_compositions(rng):
    acc = PoseSE3.identity()
    for _ in range(1000):
        acc = compose(acc, random_pose(rng))
    r = acc.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-6
    assert abs(np.linalg.det(r) - 1) < 1e-6


def test_vector_roundtrip(rng):
    v = np.concatenate([rng.normal(size=3) * 0.5, rng.normal(size=3)])
    np.testing.assert_allclose(vector_from_pose(pose_from_vector(v)), v, atol=1e-10)


# -- warping -----------------------------------------------------------------

def _texture(h, w, rng):
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([0.5 + 0.3 * np.sin(0.3 * xs + p) * np.cos(0.25 * ys) for p in rng.uniform(0, 6, 3)])


def test_identity_warp_returns_reference(rng):
    img = _texture(8, 12, rng)
    k = CameraIntrinsics(10, 10, 6, 4)
    out, mask = warp_reference(Tensor(img), Tensor(np.full((8, 12), 3.0)), k, PoseSE3.identity())
    np.testing.assert_allclose(out.data, img, atol=1e-5)
    assert mask.data.all()


def test_plane_translation_shift(rng):
    h, w, z, t = 8, 16, 5.0, 0.5
    k = CameraIntrinsics(20.0, 20.0, 8.0, 4.0)
    ramp = np.tile(np.arange(w, dtype=float), (h, 1))[None].repeat(3, axis=0)
    with T.precision(np.float64):
        out, mask = warp_reference(Tensor(ramp), Tensor(np.full((h, w), z)), k,
                                   PoseSE3(np.eye(3), np.array([t, 0.0, 0.0])))
    valid = mask.data > 0
    shift = out.data[0][valid] - ramp[0][valid]
    np.testing.assert_allclose(shift, k.fx * t / z, atol=1e-9)


def test_half_turn_empties_mask(rng):
    img = _texture(8, 12, rng)
    yaw = PoseSE3(rodrigues(np.array([0, np.pi, 0])), np.zeros(3))
    _, mask = warp_reference(Tensor(img), Tensor(np.full((8, 12), 3.0)), CameraIntrinsics(10, 10, 6, 4), yaw)
    assert mask.data.mean() < 0.05


def test_warp_pose_gradient(rng):
    target, reference = _texture(10, 14, rng), _texture(10, 14, rng)
    k = CameraIntrinsics(12, 12, 7, 5)
    depth = np.full((10, 14), 4.0)

    def loss(v):
        warped, mask = warp_reference(Tensor(reference), Tensor(depth), k, v)
        return photometric_loss(Tensor(target), [warped], [mask])
    report = gradient_check(loss, np.array([0.01, 0.02, -0.01, 0.1, -0.05, 0.05]))
    assert report.max_relative_error < 1e-3


def test_pose_check_rejects_non_rigid():
    with pytest.raises(ValueError):
        PoseSE3(np.eye(3) * 2, np.zeros(3)).check()
