import numpy as np
import pytest

from splatseq.cameras import look_at_camera, orbit_cameras
from splatseq.gaussians import (
    Gaussian3D,
    normalize_quaternions,
    quat_multiply,
    quaternions_to_rotations,
)
from splatseq.projection import LOWPASS, Covariance2D, project, project_cloud


def _gaussian(mean, quat=(1, 0, 0, 0), log_scale=(np.log(0.1),) * 3, opacity=0.0,
              color=(0.5, 0.5, 0.5)):
    return Gaussian3D(mean=np.asarray(mean, dtype=float), rotation=quat,
                      log_scale=log_scale, opacity_logit=opacity, color=color)


def test_on_axis_gaussian_projects_to_principal_point():
    cam = look_at_camera([0, 0, 0], look_at=[5, 0, 0], width=64, height=48)
    rng = np.random.default_rng(0)
    for _ in range(5):
        quat = normalize_quaternions(rng.normal(size=4))
        g = _gaussian([5.0, 0.0, 0.0], quat=quat)
        out = project(g, cam)
        assert not out.culled
        assert np.allclose(out.mean2d, [cam.cx, cam.cy], atol=1e-9)
        assert abs(out.depth - 5.0) < 1e-12


def test_isotropic_projection_matches_fd_jacobian_oracle():
    cam = look_at_camera([2.0, 0.0, 0.0], width=64, height=64)
    sigma = 0.07
    mean = np.array([0.15, -0.1, 0.2])
    g = _gaussian(mean, log_scale=(np.log(sigma),) * 3)
    out = project(g, cam)
    assert not out.culled

    # oracle: numeric Jacobian of the pinhole map around the mean
    def pinhole(p):
        q = cam.world_to_camera(p[None])[0]
        return np.array([cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy])

    h = 1e-6
    jac = np.zeros((2, 3))
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        jac[:, k] = (pinhole(mean + dp) - pinhole(mean - dp)) / (2 * h)
    cov_oracle = jac @ (sigma ** 2 * np.eye(3)) @ jac.T

    cov = out.cov2d.as_matrix() - LOWPASS * np.eye(2)  # before the low-pass term
    assert np.allclose(cov, cov_oracle, rtol=1e-5, atol=1e-7)
    # isotropic case: approximately diag((f sigma / z)^2)
    expected = (cam.fx * sigma / out.depth) ** 2
    assert np.allclose(np.diag(cov), expected, rtol=2e-2)


def test_behind_camera_is_culled_not_raised():
    cam = look_at_camera([2.0, 0.0, 0.0], width=32, height=32)
    out = project(_gaussian([3.0, 0.0, 0.0]), cam)  # behind the camera
    assert out.culled
    out = project(_gaussian([2.0 - cam.near / 2, 0.0, 0.0]), cam)  # closer than near
    assert out.culled
    beyond = cam.position - 2 * (cam.far + 1.0) * np.array([1.0, 0, 0])
    assert project(_gaussian(beyond), cam).culled


def test_lowpass_floor_on_degenerate_splats():
    cam = look_at_camera([2.0, 0.0, 0.0], width=32, height=32)
    g = _gaussian([0, 0, 0], log_scale=(np.log(1e-6),) * 3)
    out = project(g, cam)
    m = out.cov2d.as_matrix()
    assert m[0, 0] >= LOWPASS and m[1, 1] >= LOWPASS
    assert np.linalg.det(m) > 0.0


def test_covariance2d_validates_psd():
    with pytest.raises(ValueError):
        Covariance2D(1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        Covariance2D(-0.1, 0.0, 1.0)


def test_projection_is_rotation_consistent():
    """Rotating scene and camera by the same rigid transform leaves the
    projected mean and covariance unchanged within 1e-4."""
    rng = np.random.default_rng(3)
    cam = orbit_cameras(5, radius=2.0, elevation=0.2, width=64, height=64)[2]
    for trial in range(10):
        mean = rng.normal(0, 0.3, 3)
        quat = normalize_quaternions(rng.normal(size=4))
        log_scale = rng.uniform(np.log(0.05), np.log(0.3), 3)
        g = _gaussian(mean, quat=quat, log_scale=log_scale)
        base = project(g, cam)

        rigid_q = normalize_quaternions(rng.normal(size=4))
        r0 = quaternions_to_rotations(rigid_q[None])[0]
        t0 = rng.normal(0, 0.5, 3)
        moved = _gaussian(r0 @ mean + t0, quat=normalize_quaternions(quat_multiply(rigid_q, quat)),
                          log_scale=log_scale)
        moved_cam = type(cam)(
            fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
            rotation=cam.rotation @ r0.T,
            translation=cam.translation - cam.rotation @ r0.T @ t0,
            width=cam.width, height=cam.height, near=cam.near, far=cam.far,
        )
        out = project(moved, moved_cam)
        assert not out.culled and not base.culled
        assert np.allclose(out.mean2d, base.mean2d, atol=1e-4)
        assert np.allclose(out.cov2d.as_matrix(), base.cov2d.as_matrix(), atol=1e-4)
        assert abs(out.depth - base.depth) < 1e-6


def test_project_cloud_handles_empty_input():
    cam = look_at_camera([2.0, 0.0, 0.0], width=16, height=16)
    proj = project_cloud(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                         np.zeros(0), np.zeros((0, 3)), cam)
    assert proj.n == 0
