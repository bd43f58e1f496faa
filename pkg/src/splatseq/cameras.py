"""Pinhole cameras, orbit sampling, and the JSON camera manifest.

Geometry conventions: world up is +z, camera frame is x-right / y-down /
z-forward, and image sample points sit at pixel centers (col + 0.5, row + 0.5).
The world-to-camera rotation is stored row-major in manifests.
"""

import json
from dataclasses import dataclass

import numpy as np

from .gaussians import _readonly

ROTATION_TOL = 1e-6

# Focal length as a fraction of image width. At the default orbit radius of
# 2.0 this makes a unit-radius object span roughly 80% of the frame.
DEFAULT_FOCAL_FRACTION = 0.7
DEFAULT_ORBIT_RADIUS = 2.0
DEFAULT_NEAR = 0.1
DEFAULT_FAR = 20.0


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(np.reshape(self.rotation, (3, 3))))
        object.__setattr__(self, "translation", _readonly(np.reshape(self.translation, (3,))))
        for name in ("fx", "fy", "cx", "cy", "near", "far"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("camera pose must be finite")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ROTATION_TOL:
            raise ValueError("camera rotation must be orthonormal within 1e-6")
        if np.linalg.det(r) < 0.0:
            raise ValueError("camera rotation must have determinant +1")
        if not (0.0 < self.near < self.far):
            raise ValueError("camera clip planes must satisfy 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1 pixel")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return points @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "near": self.near,
            "far": self.far,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
            width=d["width"],
            height=d["height"],
            near=d["near"],
            far=d["far"],
        )


def look_at_camera(
    position,
    look_at=(0.0, 0.0, 0.0),
    width: int = 256,
    height: int = 256,
    focal: float | None = None,
    near: float = DEFAULT_NEAR,
    far: float = DEFAULT_FAR,
    up=(0.0, 0.0, 1.0),
) -> Camera:
    """Camera at `position` with its optical axis aimed at `look_at`."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    look_at = np.asarray(look_at, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    forward = look_at - position
    dist = np.linalg.norm(forward)
    if dist == 0.0:
        raise ValueError("camera position must differ from the look-at point")
    forward = forward / dist
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / rn
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])  # rows: camera x, y, z axes
    translation = -rotation @ position
    if focal is None:
        focal = DEFAULT_FOCAL_FRACTION * width
    return Camera(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rotation,
        translation=translation,
        width=width,
        height=height,
        near=near,
        far=far,
    )


def orbit_cameras(
    n: int,
    radius: float = DEFAULT_ORBIT_RADIUS,
    elevation: float = 0.0,
    look_at=(0.0, 0.0, 0.0),
    width: int = 256,
    height: int = 256,
    focal: float | None = None,
    near: float = DEFAULT_NEAR,
    far: float = DEFAULT_FAR,
    azimuth_offset: float = 0.0,
) -> list[Camera]:
    """Uniform azimuth ring of `n` cameras at the given elevation, all aimed
    at `look_at`. Camera k sits at azimuth 2*pi*k/n + azimuth_offset."""
    if n < 1:
        raise ValueError("orbit needs at least one camera")
    if radius <= 0.0:
        raise ValueError("orbit radius must be positive")
    look_at = np.asarray(look_at, dtype=np.float64).reshape(3)
    cameras = []
    for k in range(n):
        azimuth = 2.0 * np.pi * k / n + azimuth_offset
        offset = radius * np.array(
            [
                np.cos(elevation) * np.cos(azimuth),
                np.cos(elevation) * np.sin(azimuth),
                np.sin(elevation),
            ]
        )
        cameras.append(
            look_at_camera(
                position=look_at + offset,
                look_at=look_at,
                width=width,
                height=height,
                focal=focal,
                near=near,
                far=far,
            )
        )
    return cameras


def cameras_to_manifest(cameras) -> dict:
    return {"cameras": [c.to_dict() for c in cameras]}


def manifest_to_cameras(manifest: dict) -> list[Camera]:
    return [Camera.from_dict(d) for d in manifest["cameras"]]


def save_camera_manifest(path, cameras) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cameras_to_manifest(cameras), f, sort_keys=True, indent=1)


def load_camera_manifest(path) -> list[Camera]:
    with open(path, "r", encoding="utf-8") as f:
        return manifest_to_cameras(json.load(f))
