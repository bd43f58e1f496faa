"""Perspective projection of 3D gaussians to screen-space 2D gaussians.

The image of a 3D gaussian under a pinhole camera is approximated by a 2D
gaussian whose covariance is J W Sigma W^T J^T, with W the camera rotation and
J the Jacobian of the perspective map evaluated at the gaussian center. A
0.3 px^2 low-pass term is added to the projected diagonal so splats never
degenerate below pixel size. Densities are truncated at the 3-sigma ellipse;
`CUTOFF_QMAX` is that boundary expressed on the quadratic form.
"""

from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .gaussians import Gaussian3D, quaternions_to_rotations, sigmoid

LOWPASS = 0.3          # px^2 added to projected covariance diagonals
CUTOFF_SIGMA = 3.0
CUTOFF_QMAX = CUTOFF_SIGMA * CUTOFF_SIGMA
# density at the cutoff boundary; the truncated bell is affinely rescaled to
# reach zero there (continuously) while keeping the center density exactly 1
CUTOFF_FLOOR = float(np.exp(-0.5 * CUTOFF_QMAX))


@dataclass(frozen=True)
class Covariance2D:
    """Symmetric 2x2 screen-space covariance, entries in px^2."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a < 0.0 or self.c < 0.0 or self.a * self.c - self.b * self.b < 0.0:
            raise ValueError("2D covariance must be positive semi-definite")

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b, self.c]])


@dataclass(frozen=True)
class ProjectedSplat:
    culled: bool
    depth: float
    mean2d: np.ndarray | None = None
    cov2d: Covariance2D | None = None


class ProjectedCloud:
    """Vectorized projection of every gaussian in a cloud for one camera.

    Arrays are aligned with the cloud index; entries of culled gaussians are
    present but meaningless and must be gated by `culled`.
    """

    __slots__ = (
        "mean2d", "depth", "culled", "cov_a", "cov_b", "cov_c",
        "conic_a", "conic_b", "conic_c", "extent_x", "extent_y",
        "opacity", "color", "n",
    )

    def __init__(self, mean2d, depth, culled, cov_a, cov_b, cov_c,
                 conic_a, conic_b, conic_c, extent_x, extent_y, opacity, color):
        self.mean2d = mean2d
        self.depth = depth
        self.culled = culled
        self.cov_a = cov_a
        self.cov_b = cov_b
        self.cov_c = cov_c
        self.conic_a = conic_a
        self.conic_b = conic_b
        self.conic_c = conic_c
        self.extent_x = extent_x
        self.extent_y = extent_y
        self.opacity = opacity
        self.color = color
        self.n = mean2d.shape[0]


def _camera_space(means: np.ndarray, camera: Camera):
    q = means @ camera.rotation.T + camera.translation
    return q[:, 0], q[:, 1], q[:, 2]


def _perspective_jacobian(x, y, z, camera: Camera) -> np.ndarray:
    """(N, 2, 3) Jacobian of (fx*x/z + cx, fy*y/z + cy) wrt camera-space xyz."""
    n = x.shape[0]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = camera.fx * inv_z
    j[:, 0, 2] = -camera.fx * x * inv_z2
    j[:, 1, 1] = camera.fy * inv_z
    j[:, 1, 2] = -camera.fy * y * inv_z2
    return j


def project_cloud(means, rotations, log_scales, opacity_logits, colors,
                  camera: Camera) -> ProjectedCloud:
    """Project all gaussians; gaussians outside (near, far) are flagged culled."""
    means = np.asarray(means, dtype=np.float64)
    n = means.shape[0]
    if n == 0:
        zero = np.zeros(0)
        return ProjectedCloud(np.zeros((0, 2)), zero, np.zeros(0, dtype=bool),
                              zero, zero, zero, zero, zero, zero, zero, zero,
                              zero, np.zeros((0, 3)))
    x, y, z = _camera_space(means, camera)
    culled = ~((z > camera.near) & (z < camera.far))
    zs = np.where(culled, 1.0, z)  # safe divisor; culled rows are gated out

    mean2d = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=1)

    rot = quaternions_to_rotations(rotations)
    m3 = rot * np.exp(np.asarray(log_scales, dtype=np.float64))[:, None, :]
    sigma = m3 @ np.transpose(m3, (0, 2, 1))
    w = camera.rotation
    sigma_cam = np.einsum("ij,njk,lk->nil", w, sigma, w)

    j = _perspective_jacobian(x, y, zs, camera)
    cov = np.einsum("nij,njk,nlk->nil", j, sigma_cam, j)
    cov_a = cov[:, 0, 0] + LOWPASS
    cov_b = cov[:, 0, 1]
    cov_c = cov[:, 1, 1] + LOWPASS

    det = cov_a * cov_c - cov_b * cov_b
    conic_a = cov_c / det
    conic_b = -cov_b / det
    conic_c = cov_a / det

    return ProjectedCloud(
        mean2d=mean2d,
        depth=z,
        culled=culled,
        cov_a=cov_a,
        cov_b=cov_b,
        cov_c=cov_c,
        conic_a=conic_a,
        conic_b=conic_b,
        conic_c=conic_c,
        extent_x=CUTOFF_SIGMA * np.sqrt(cov_a),
        extent_y=CUTOFF_SIGMA * np.sqrt(cov_c),
        opacity=sigmoid(np.asarray(opacity_logits, dtype=np.float64)),
        color=np.asarray(colors, dtype=np.float64),
    )


def project(gaussian: Gaussian3D, camera: Camera) -> ProjectedSplat:
    """Project a single gaussian. Behind-camera input is flagged, not raised."""
    proj = project_cloud(
        gaussian.mean[None], gaussian.rotation[None], gaussian.log_scale[None],
        np.array([gaussian.opacity_logit]), gaussian.color[None], camera,
    )
    if proj.culled[0]:
        return ProjectedSplat(culled=True, depth=float(proj.depth[0]))
    return ProjectedSplat(
        culled=False,
        depth=float(proj.depth[0]),
        mean2d=proj.mean2d[0],
        cov2d=Covariance2D(float(proj.cov_a[0]), float(proj.cov_b[0]), float(proj.cov_c[0])),
    )


def _rotation_quat_jacobian(quats_unit: np.ndarray) -> np.ndarray:
    """(N, 4, 3, 3) partials of the rotation matrix wrt unit quaternion parts."""
    w, x, y, z = (quats_unit[:, k] for k in range(4))
    zero = np.zeros_like(w)
    dw = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    dx = np.stack([
        np.stack([zero, y, z], axis=-1),
        np.stack([y, -2.0 * x, -w], axis=-1),
        np.stack([z, w, -2.0 * x], axis=-1),
    ], axis=-2)
    dy = np.stack([
        np.stack([-2.0 * y, x, w], axis=-1),
        np.stack([x, zero, z], axis=-1),
        np.stack([-w, z, -2.0 * y], axis=-1),
    ], axis=-2)
    dz = np.stack([
        np.stack([-2.0 * z, -w, x], axis=-1),
        np.stack([w, -2.0 * z, y], axis=-1),
        np.stack([x, y, zero], axis=-1),
    ], axis=-2)
    return 2.0 * np.stack([dw, dx, dy, dz], axis=1)


def project_cloud_backward(means, rotations, log_scales, camera: Camera,
                           g_mean2d, g_cov, g_depth=None):
    """Chain screen-space gradients back to 3D gaussian parameters.

    g_mean2d: (N, 2) dL/d mean2d; g_cov: (N, 3) dL/d (a, b, c) of the final
    projected covariance (the low-pass addition is identity in a and c);
    g_depth: optional (N,) dL/d camera-space depth.

    Returns (d_means, d_rotations, d_log_scales); rows for culled gaussians
    are zero.
    """
    means = np.asarray(means, dtype=np.float64)
    n = means.shape[0]
    if n == 0:
        return np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3))

    x, y, z = _camera_space(means, camera)
    culled = ~((z > camera.near) & (z < camera.far))
    z = np.where(culled, 1.0, z)
    fx, fy = camera.fx, camera.fy
    w = camera.rotation

    quats = np.asarray(rotations, dtype=np.float64)
    qnorm = np.linalg.norm(quats, axis=1, keepdims=True)
    qhat = quats / qnorm
    rot = quaternions_to_rotations(quats)
    scales = np.exp(np.asarray(log_scales, dtype=np.float64))
    m3 = rot * scales[:, None, :]
    sigma = m3 @ np.transpose(m3, (0, 2, 1))
    sigma_cam = np.einsum("ij,njk,lk->nil", w, sigma, w)
    j = _perspective_jacobian(x, y, z, camera)

    da, db, dc = g_cov[:, 0], g_cov[:, 1], g_cov[:, 2]

    # dL/dSigma_cam, entries treated independently: J^T [[da, db], [0, dc]] J
    gupper = np.zeros((n, 2, 2))
    gupper[:, 0, 0] = da
    gupper[:, 0, 1] = db
    gupper[:, 1, 1] = dc
    g_sigma_cam = np.einsum("nim,nij,njl->nml", j, gupper, j)

    # dL/dJ = [[2 da, db], [db, 2 dc]] (J Sigma_cam)
    ja = np.einsum("nik,nkl->nil", j, sigma_cam)
    g_j = np.empty((n, 2, 3))
    g_j[:, 0, :] = 2.0 * da[:, None] * ja[:, 0, :] + db[:, None] * ja[:, 1, :]
    g_j[:, 1, :] = 2.0 * dc[:, None] * ja[:, 1, :] + db[:, None] * ja[:, 0, :]

    # camera-space mean gradient: screen mean + depth + J's dependence on xyz
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    inv_z3 = inv_z2 * inv_z
    g_q = np.zeros((n, 3))
    g_q[:, 0] = g_mean2d[:, 0] * fx * inv_z
    g_q[:, 1] = g_mean2d[:, 1] * fy * inv_z
    g_q[:, 2] = -g_mean2d[:, 0] * fx * x * inv_z2 - g_mean2d[:, 1] * fy * y * inv_z2
    if g_depth is not None:
        g_q[:, 2] += g_depth
    g_q[:, 0] += g_j[:, 0, 2] * (-fx * inv_z2)
    g_q[:, 1] += g_j[:, 1, 2] * (-fy * inv_z2)
    g_q[:, 2] += (
        g_j[:, 0, 0] * (-fx * inv_z2)
        + g_j[:, 1, 1] * (-fy * inv_z2)
        + g_j[:, 0, 2] * (2.0 * fx * x * inv_z3)
        + g_j[:, 1, 2] * (2.0 * fy * y * inv_z3)
    )
    d_means = g_q @ w

    # world covariance gradient, then split into rotation and scale parts
    g_sigma = np.einsum("ij,nil,lk->njk", w, g_sigma_cam, w)
    g_m3 = np.einsum("njk,nkl->njl", g_sigma + np.transpose(g_sigma, (0, 2, 1)), m3)
    d_log_scales = np.einsum("nik,nik->nk", g_m3, rot) * scales
    g_rot = g_m3 * scales[:, None, :]

    drot_dq = _rotation_quat_jacobian(qhat)
    g_qhat = np.einsum("nmij,nij->nm", drot_dq, g_rot)
    # through the normalization q_hat = q / |q|
    g_quats = (g_qhat - qhat * np.sum(g_qhat * qhat, axis=1, keepdims=True)) / qnorm

    keep = ~culled
    return (
        d_means * keep[:, None],
        g_quats * keep[:, None],
        d_log_scales * keep[:, None],
    )
