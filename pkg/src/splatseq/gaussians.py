"""Scene primitives: anisotropic 3D gaussians and clouds of them.

Conventions used throughout the package:
  * quaternions are (w, x, y, z), kept unit-norm by construction / renormalization
  * per-axis scales are stored as log standard deviations (world units)
  * opacity is stored as a logit; sigmoid(logit) is the compositing opacity
  * colors are plain view-independent RGB in [0, 1]
"""

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-6


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def normalize_quaternions(quats: np.ndarray) -> np.ndarray:
    """Project quaternions back onto the unit sphere. Accepts (4,) or (N, 4)."""
    quats = np.asarray(quats, dtype=np.float64)
    norm = np.linalg.norm(quats, axis=-1, keepdims=True)
    if np.any(norm == 0.0) or not np.all(np.isfinite(norm)):
        raise ValueError("quaternion must be finite and nonzero")
    return quats / norm


def quaternions_to_rotations(quats: np.ndarray) -> np.ndarray:
    """Unit rotation matrices from (N, 4) quaternions (normalized internally)."""
    q = normalize_quaternions(np.atleast_2d(quats))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[:, 0, 1] = 2.0 * (x * y - w * z)
    rot[:, 0, 2] = 2.0 * (x * z + w * y)
    rot[:, 1, 0] = 2.0 * (x * y + w * z)
    rot[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[:, 1, 2] = 2.0 * (y * z - w * x)
    rot[:, 2, 0] = 2.0 * (x * z - w * y)
    rot[:, 2, 1] = 2.0 * (y * z + w * x)
    rot[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (..., 4) quaternions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def covariance3d(rotation: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """World-space covariance of one gaussian: R diag(s) diag(s) R^T.

    `rotation` is a quaternion (w, x, y, z); callers should pass unit-norm
    input, non-unit quaternions are normalized. Eigenvalues of the result are
    exp(2 * log_scale), permuted by the rotation.
    """
    rotation = np.asarray(rotation, dtype=np.float64).reshape(4)
    log_scale = np.asarray(log_scale, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(log_scale))):
        raise ValueError("covariance3d requires finite inputs")
    rot = quaternions_to_rotations(rotation[None])[0]
    m = rot * np.exp(log_scale)[None, :]
    return m @ m.T


def _readonly(a: np.ndarray) -> np.ndarray:
    # always copy: value types must not alias caller-owned buffers
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Gaussian3D:
    """One splat: position, orientation, log-scales, opacity logit, RGB color."""

    mean: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(np.reshape(self.mean, (3,))))
        object.__setattr__(self, "rotation", _readonly(np.reshape(self.rotation, (4,))))
        object.__setattr__(self, "log_scale", _readonly(np.reshape(self.log_scale, (3,))))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        object.__setattr__(self, "color", _readonly(np.reshape(self.color, (3,))))
        if not (
            np.all(np.isfinite(self.mean))
            and np.all(np.isfinite(self.rotation))
            and np.all(np.isfinite(self.log_scale))
            and np.isfinite(self.opacity_logit)
            and np.all(np.isfinite(self.color))
        ):
            raise ValueError("gaussian parameters must be finite")
        if abs(np.linalg.norm(self.rotation) - 1.0) > QUAT_NORM_TOL:
            raise ValueError("rotation quaternion must be unit-norm within 1e-6")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError("color must lie in [0, 1]")

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)


@dataclass(frozen=True)
class GaussianCloud:
    """A scene: N gaussians in structure-of-arrays form plus a background color.

    Arrays are read-only once constructed; operations on clouds are pure
    functions returning new clouds, so values are safe to share across threads.
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        n = np.asarray(self.means).shape[0] if np.asarray(self.means).size else 0
        object.__setattr__(self, "means", _readonly(np.reshape(self.means, (n, 3))))
        object.__setattr__(self, "rotations", _readonly(np.reshape(self.rotations, (n, 4))))
        object.__setattr__(self, "log_scales", _readonly(np.reshape(self.log_scales, (n, 3))))
        object.__setattr__(self, "opacity_logits", _readonly(np.reshape(self.opacity_logits, (n,))))
        object.__setattr__(self, "colors", _readonly(np.reshape(self.colors, (n, 3))))
        object.__setattr__(self, "background", _readonly(np.reshape(self.background, (3,))))
        for name in ("means", "rotations", "log_scales", "opacity_logits", "colors", "background"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.max(np.abs(norms - 1.0)) > QUAT_NORM_TOL:
                raise ValueError("all rotation quaternions must be unit-norm within 1e-6")
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise ValueError("colors must lie in [0, 1]")
        if np.any(self.background < 0.0) or np.any(self.background > 1.0):
            raise ValueError("background must lie in [0, 1]")

    def __len__(self) -> int:
        return self.means.shape[0]

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i],
            rotation=self.rotations[i],
            log_scale=self.log_scales[i],
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i],
        )

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @staticmethod
    def from_gaussians(gaussians, background=(1.0, 1.0, 1.0)) -> "GaussianCloud":
        gaussians = list(gaussians)
        if gaussians:
            return GaussianCloud(
                means=np.stack([g.mean for g in gaussians]),
                rotations=np.stack([g.rotation for g in gaussians]),
                log_scales=np.stack([g.log_scale for g in gaussians]),
                opacity_logits=np.array([g.opacity_logit for g in gaussians]),
                colors=np.stack([g.color for g in gaussians]),
                background=np.asarray(background, dtype=np.float64),
            )
        return GaussianCloud.empty(background)

    @staticmethod
    def empty(background=(1.0, 1.0, 1.0)) -> "GaussianCloud":
        return GaussianCloud(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
            background=np.asarray(background, dtype=np.float64),
        )

    def replace(self, **updates) -> "GaussianCloud":
        fields = dict(
            means=self.means,
            rotations=self.rotations,
            log_scales=self.log_scales,
            opacity_logits=self.opacity_logits,
            colors=self.colors,
            background=self.background,
        )
        fields.update(updates)
        return GaussianCloud(**fields)

    def transformed(self, rotation_quat, translation) -> "GaussianCloud":
        """Rigidly move the whole cloud: means rotated+shifted, orientations composed."""
        rot = quaternions_to_rotations(np.asarray(rotation_quat)[None])[0]
        translation = np.asarray(translation, dtype=np.float64).reshape(3)
        return self.replace(
            means=self.means @ rot.T + translation,
            rotations=normalize_quaternions(
                quat_multiply(np.asarray(rotation_quat)[None, :], self.rotations)
            ),
        )
