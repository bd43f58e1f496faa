"""Synthetic ground-truth scenes: an animated gaussian cloud whose per-frame
state is known in closed form.

These scenes stand in for generated multi-view data, so reconstruction and
evaluation can be exercised against an exact oracle: datasets are rendered
from the ground-truth clouds, and any reconstruction can be scored against
renders of the same clouds from arbitrary cameras.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .cameras import Camera
from .gaussians import GaussianCloud, logit, normalize_quaternions, quat_from_axis_angle


@dataclass(frozen=True)
class SyntheticScene:
    """Base cloud generator plus a rigid trajectory and optional oscillation.

    motion_amplitude scales both the swaying rotation (radians) and the
    vertical bob; it is the synthetic analog of a seed video's motion score.
    """

    n_gaussians: int = 200
    seed: int = 0
    motion_amplitude: float = 0.3
    oscillation: float = 0.15  # per-gaussian breathing, fraction of motion
    object_radius: float = 0.55
    background: tuple = (1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SyntheticScene":
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return SyntheticScene(**d)

    def base_cloud(self) -> GaussianCloud:
        """Two-lobe colored blob; lobes give the object an azimuth-dependent
        appearance so sparse view coverage visibly hurts reconstruction."""
        rng = np.random.default_rng(self.seed)
        n = self.n_gaussians
        r = self.object_radius

        lobe = rng.random(n) < 0.35
        centers = np.where(lobe[:, None],
                           np.array([[0.45 * r, 0.35 * r, 0.15 * r]]),
                           np.array([[-0.2 * r, -0.1 * r, 0.0]]))
        spread = np.where(lobe[:, None], 0.45 * r, 0.8 * r)
        means = centers + rng.normal(size=(n, 3)) * spread / np.sqrt(3.0)

        rotations = normalize_quaternions(rng.normal(size=(n, 4)))
        log_scales = rng.uniform(np.log(0.06 * r), np.log(0.22 * r), (n, 3))
        opacity_logits = np.full(n, logit(0.75)) + rng.normal(0.0, 0.35, n)

        # smooth positional palette plus a distinct hue on the small lobe
        t = (means - means.min(axis=0)) / (np.ptp(means, axis=0) + 1e-9)
        colors = np.stack([
            0.25 + 0.55 * t[:, 0],
            0.30 + 0.45 * t[:, 1],
            0.65 - 0.40 * t[:, 2],
        ], axis=1)
        colors[lobe] = colors[lobe] * 0.35 + np.array([0.85, 0.55, 0.15]) * 0.65
        colors += rng.normal(0.0, 0.02, (n, 3))

        return GaussianCloud(
            means=means,
            rotations=rotations,
            log_scales=log_scales,
            opacity_logits=opacity_logits,
            colors=np.clip(colors, 0.0, 1.0),
            background=np.asarray(self.background, dtype=np.float64),
        )

    def cloud_at(self, frame_index: int, n_frames: int) -> GaussianCloud:
        """Ground-truth cloud for one frame, derived in closed form."""
        base = self.base_cloud()
        if n_frames <= 1:
            phase = 0.0
        else:
            phase = 2.0 * np.pi * frame_index / n_frames
        angle = self.motion_amplitude * np.sin(phase)
        bob = 0.25 * self.motion_amplitude * self.object_radius * np.sin(2.0 * phase)
        moved = base.transformed(quat_from_axis_angle([0.0, 0.0, 1.0], angle),
                                 [0.0, 0.0, bob])
        if self.oscillation <= 0.0:
            return moved
        rng = np.random.default_rng(self.seed + 7919)
        directions = rng.normal(size=(len(base), 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        phases = rng.uniform(0.0, 2.0 * np.pi, len(base))
        amp = self.oscillation * self.motion_amplitude * self.object_radius
        offsets = directions * (amp * np.sin(phase + phases))[:, None]
        return moved.replace(means=moved.means + offsets)


def add_parameter_noise(cloud: GaussianCloud, sigma: float, seed: int = 0) -> GaussianCloud:
    """Corrupt every parameter group with gaussian noise of the given scale;
    used for degradation studies of evaluation metrics."""
    if sigma == 0.0:
        return cloud
    rng = np.random.default_rng(seed)
    n = len(cloud)
    return GaussianCloud(
        means=cloud.means + rng.normal(0.0, sigma, (n, 3)),
        rotations=normalize_quaternions(cloud.rotations + rng.normal(0.0, sigma, (n, 4))),
        log_scales=cloud.log_scales + rng.normal(0.0, sigma, (n, 3)),
        opacity_logits=cloud.opacity_logits + rng.normal(0.0, sigma, n),
        colors=np.clip(cloud.colors + rng.normal(0.0, sigma, (n, 3)), 0.0, 1.0),
        background=cloud.background,
    )


def held_out_cameras(n: int = 6, n_train: int = 18, **orbit_kwargs) -> list[Camera]:
    """Orbit cameras offset by half the training spacing, so they never
    coincide with any training view."""
    from .cameras import orbit_cameras

    return orbit_cameras(n, azimuth_offset=np.pi / n_train, **orbit_kwargs)
