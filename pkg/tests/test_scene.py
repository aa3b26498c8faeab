import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from splatfuse.errors import BehindCamera
from splatfuse.scene import (Camera, Gaussian, GaussianSet, normalize_stamps, project,
                             project_gaussian, quat_to_rotmat)


def _gaussian(mu, s=0.1):
    return Gaussian(np.asarray(mu, float), np.full(3, np.log(s)), np.array([1.0, 0, 0, 0]),
                    0.0, np.full((1, 3), 0.5))


def test_quaternion_matches_scipy(rng):
    q = rng.normal(size=(20, 4))
    ours = quat_to_rotmat(q)
    ref = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()  # scipy is scalar-last
    assert np.allclose(ours, ref, atol=1e-12)


def test_identity_quaternion():
    assert np.array_equal(quat_to_rotmat(np.array([1.0, 0, 0, 0])), np.eye(3))


def test_on_axis_projects_to_principal_point():
    cam = Camera(50.0, 50.0, 31.5, 23.5, 64, 48)
    mean, _, depth = project_gaussian(_gaussian([0, 0, 1.0]), cam)
    assert np.allclose(mean, [31.5, 23.5])
    assert depth == 1.0


def test_isotropic_covariance_closed_form():
    f, s, z = 40.0, 0.05, 2.0
    cam = Camera(f, f, 15.5, 15.5, 32, 32)
    _, cov, _ = project_gaussian(_gaussian([0, 0, z], s), cam)
    expect = (f * s / z) ** 2 + 0.3
    assert np.allclose(cov, np.diag([expect, expect]), atol=1e-12)


def test_behind_camera():
    cam = Camera(10.0, 10.0, 4.0, 4.0, 9, 9)
    with pytest.raises(BehindCamera):
        project_gaussian(_gaussian([0, 0, 0.005]), cam)


def test_projection_equivariant_under_rigid_motion(rng):
    """Moving scene and camera by the same rigid transform leaves the image unchanged."""
    n = 10
    gs = GaussianSet(np.c_[rng.uniform(-1, 1, (n, 2)), rng.uniform(2, 4, n)],
                     rng.uniform(-2, -1, (n, 3)), rng.normal(size=(n, 4)), rng.normal(size=n),
                     rng.uniform(0, 1, (n, 1, 3)))
    cam = Camera(30.0, 30.0, 15.5, 15.5, 32, 32)
    Q = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    b = rng.normal(size=3)
    moved = gs.copy()
    moved.mu = gs.mu @ Q.T + b
    qw = Rotation.from_matrix(Q).as_quat()[[3, 0, 1, 2]]
    w1, v1 = qw[0], qw[1:]
    w2, v2 = gs.rot[:, :1], gs.rot[:, 1:]
    moved.rot = np.c_[w1 * w2 - v2 @ v1[:, None], w1 * v2 + w2 * v1 + np.cross(v1, v2)]
    moved_cam = cam.with_pose(cam.R @ Q.T, cam.t - cam.R @ Q.T @ b)
    a, c = project(gs, cam), project(moved, moved_cam)
    assert np.allclose(a.mean2d, c.mean2d, atol=1e-9)
    assert np.allclose(a.cov2d, c.cov2d, atol=1e-9)


def test_look_at_centre_and_axis():
    cam = Camera.look_at([1.0, 2.0, -3.0], [0.0, 0.0, 0.0], fx=20, width=16, height=16)
    assert np.allclose(cam.center, [1, 2, -3])
    assert np.allclose(cam.world_to_cam([[0.0, 0.0, 0.0]])[0, :2], 0, atol=1e-12)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(ValueError):
        Camera(0.0, 10.0, 4.0, 4.0, 9, 9)
    with pytest.raises(ValueError):
        Camera(10.0, 10.0, 12.0, 4.0, 9, 9)
    with pytest.raises(ValueError):
        Camera(10.0, 10.0, 4.0, 4.0, 9, 9, R=np.ones((3, 3)))


def test_stamp_normalization_endpoints():
    t, rng_ = normalize_stamps([3.0, 5.0])
    assert list(t) == [0.0, 1.0] and rng_ == (3.0, 5.0)
    t, _ = normalize_stamps([7.0, 7.0])
    assert list(t) == [0.0, 0.0]


def test_gaussian_set_concat_and_index():
    a = GaussianSet.from_list([_gaussian([0, 0, 1.0])])
    b = GaussianSet.from_list([_gaussian([1, 0, 2.0]), _gaussian([2, 0, 3.0])])
    c = GaussianSet.concat([a, b])
    assert len(c) == 3 and c.dyn_logit is None
    assert np.array_equal(c[2].mu, [2, 0, 3.0])
