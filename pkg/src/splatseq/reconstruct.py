"""Per-frame scene fitting: initialize a cloud, then run adaptive gradient
descent on the photometric loss against the frame's posed views.

One optimize_frame call is sequential over steps; calls for different frames
share no mutable state and can run fully in parallel.
"""

import csv
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial import cKDTree

from .cameras import Camera
from .gaussians import GaussianCloud, logit, sigmoid
from .losses import photometric_loss
from .optim import Adam
from .rasterizer import render_arrays, render_backward_arrays


class NonFiniteLossError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite photometric loss ({value}) at step {step}")
        self.step = step


@dataclass(frozen=True)
class FrameViewSet:
    """Posed target views for a single timestep."""

    views: tuple
    frame_index: int = 0

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise ValueError("a frame needs at least one view")
        fixed = []
        res = None
        for camera, image in views:
            image = np.asarray(image, dtype=np.float64)
            if image.ndim != 3 or image.shape[2] != 3:
                raise ValueError("target views must be HxWx3 images")
            if res is None:
                res = image.shape[:2]
            elif image.shape[:2] != res:
                raise ValueError("all views of a frame must share one resolution")
            if (camera.height, camera.width) != res:
                raise ValueError("camera dimensions must match the view image")
            fixed.append((camera, image))
        object.__setattr__(self, "views", tuple(fixed))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.views[0][1].shape[:2]

    @property
    def cameras(self) -> list[Camera]:
        return [c for c, _ in self.views]

    def __len__(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class OptimConfig:
    """Reconstruction hyperparameters. Learning rates follow common splatting
    practice; they are configuration, not contract."""

    n_splats: int = 100_000
    n_steps: int = 4_000
    lr_means: float = 1.6e-4
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 5e-2
    lr_colors: float = 2.5e-3
    scene_extent: float = 1.0  # multiplies lr_means
    lambda_dssim: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    prune_opacity_threshold: float = 0.005
    prune_every: int = 500
    view_order: str = "round_robin"  # or "random"
    init_opacity: float = 0.1
    init_region_radius: float = 1.0
    look_at: tuple = (0.0, 0.0, 0.0)
    background: tuple = (1.0, 1.0, 1.0)
    tile_size: int = 16
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.n_splats < 1:
            raise ValueError("n_splats must be at least 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda_dssim must lie in [0, 1]")
        if self.view_order not in ("round_robin", "random"):
            raise ValueError("view_order must be 'round_robin' or 'random'")
        if not 0.0 < self.init_opacity < 1.0:
            raise ValueError("init_opacity must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["look_at"] = list(self.look_at)
        d["background"] = list(self.background)
        return d

    @staticmethod
    def from_dict(d: dict) -> "OptimConfig":
        d = dict(d)
        if "look_at" in d:
            d["look_at"] = tuple(d["look_at"])
        if "background" in d:
            d["background"] = tuple(d["background"])
        return OptimConfig(**d)


@dataclass
class OptimTrace:
    """Per-step optimization log."""

    steps: list = field(default_factory=list)  # (step, view_index, loss, psnr_train)

    def append(self, step: int, view_index: int, loss: float, psnr_train: float):
        self.steps.append((step, view_index, float(loss), float(psnr_train)))

    @property
    def losses(self) -> list[float]:
        return [s[2] for s in self.steps]

    @property
    def view_indices(self) -> list[int]:
        return [s[1] for s in self.steps]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss", "psnr_train", "view_index"])
            for step, view_index, loss, psnr_train in self.steps:
                writer.writerow([step, repr(loss), repr(psnr_train), view_index])


def init_cloud(views: FrameViewSet, config: OptimConfig) -> GaussianCloud:
    """Seed cloud: means uniform in a ball around the look-at point, isotropic
    scales sized so the mean nearest-neighbor distance is about 2 sigma,
    opacity at init_opacity, colors drawn from target-view pixels."""
    rng = np.random.default_rng(config.seed)
    n = config.n_splats
    look_at = np.asarray(config.look_at, dtype=np.float64)

    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = config.init_region_radius * rng.random(n) ** (1.0 / 3.0)
    means = look_at + direction * radius[:, None]

    if n > 1:
        nn_dist, _ = cKDTree(means).query(means, k=2)
        sigma = max(float(nn_dist[:, 1].mean()) / 2.0, 1e-4)
    else:
        sigma = config.init_region_radius / 2.0
    log_scales = np.full((n, 3), np.log(sigma))

    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0

    pixels = np.concatenate([img.reshape(-1, 3) for _, img in views.views])
    colors = pixels[rng.integers(0, pixels.shape[0], size=n)]

    return GaussianCloud(
        means=means,
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=np.full(n, logit(config.init_opacity)),
        colors=np.clip(colors, 0.0, 1.0),
        background=np.asarray(config.background, dtype=np.float64),
    )


def _train_psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0.0:
        return 99.0
    return min(10.0 * np.log10(1.0 / mse), 99.0)


def optimize_frame(views: FrameViewSet, config: OptimConfig,
                   checkpoint_callback=None) -> tuple[GaussianCloud, OptimTrace]:
    """Fit one cloud to one frame's views.

    Each step renders one view (round-robin by default), backpropagates the
    photometric loss, applies the per-group Adam update, renormalizes
    quaternions, and clamps colors back into [0, 1]. Every `prune_every`
    steps, gaussians whose opacity fell below the prune threshold are dropped
    and never replaced. Deterministic for a fixed config.
    """
    cloud = init_cloud(views, config)
    trace = OptimTrace()
    if config.n_steps == 0:
        return cloud, trace

    params = {
        "means": cloud.means.copy(),
        "rotations": cloud.rotations.copy(),
        "log_scales": cloud.log_scales.copy(),
        "opacity_logits": cloud.opacity_logits.copy(),
        "colors": cloud.colors.copy(),
    }
    background = np.asarray(config.background, dtype=np.float64)
    optimizer = Adam(
        params,
        learning_rates={
            "means": config.lr_means * config.scene_extent,
            "rotations": config.lr_rotations,
            "log_scales": config.lr_scales,
            "opacity_logits": config.lr_opacities,
            "colors": config.lr_colors,
        },
        beta1=config.beta1, beta2=config.beta2, eps=config.eps,
    )
    view_rng = np.random.default_rng(config.seed + 1) if config.view_order == "random" else None

    def snapshot() -> GaussianCloud:
        return GaussianCloud(
            means=params["means"], rotations=params["rotations"],
            log_scales=params["log_scales"], opacity_logits=params["opacity_logits"],
            colors=params["colors"], background=background,
        )

    n_views = len(views)
    for step in range(1, config.n_steps + 1):
        view_index = int(view_rng.integers(n_views)) if view_rng is not None \
            else (step - 1) % n_views
        camera, target = views.views[view_index]

        out = render_arrays(params["means"], params["rotations"], params["log_scales"],
                            params["opacity_logits"], params["colors"], background,
                            camera, tile_size=config.tile_size)
        loss, g_image = photometric_loss(out.image, target, config.lambda_dssim)
        if not np.isfinite(loss):
            raise NonFiniteLossError(step, loss)
        grads = render_backward_arrays(params["means"], params["rotations"],
                                       params["log_scales"], params["opacity_logits"],
                                       params["colors"], background, camera,
                                       g_image, tile_size=config.tile_size)
        optimizer.step({
            "means": grads.means,
            "rotations": grads.rotations,
            "log_scales": grads.log_scales,
            "opacity_logits": grads.opacity_logits,
            "colors": grads.colors,
        })
        norms = np.linalg.norm(params["rotations"], axis=1, keepdims=True)
        params["rotations"] /= norms
        np.clip(params["colors"], 0.0, 1.0, out=params["colors"])

        trace.append(step, view_index, loss, _train_psnr(out.image, target))

        if config.prune_every > 0 and step % config.prune_every == 0:
            keep = sigmoid(params["opacity_logits"]) >= config.prune_opacity_threshold
            if not np.all(keep) and np.any(keep):
                for name in params:
                    params[name] = params[name][keep]
                optimizer.drop_rows(keep)

        if checkpoint_callback is not None and config.checkpoint_every > 0 \
                and step % config.checkpoint_every == 0:
            checkpoint_callback(step, snapshot())

    return snapshot(), trace
