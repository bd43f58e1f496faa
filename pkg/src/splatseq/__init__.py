"""splatseq: dynamic scenes as per-frame gaussian splat clouds.

Reconstructs each frame of a posed multi-view sequence independently with a
differentiable tile rasterizer, serializes the resulting cloud videos, and
scores them with an orbit-render similarity protocol.
"""

from .cameras import Camera, look_at_camera, orbit_cameras
from .embedders import RemoteEmbedder, SurrogateEmbedder
from .evaluate import EvalReport, ablate, clip_i, evaluate_video, psnr, render_eval_videos
from .gaussians import Gaussian3D, GaussianCloud, covariance3d
from .pipeline import (
    SeedVideo,
    Video3D,
    ingest_dataset,
    load_video3d,
    reconstruct_video,
    save_video3d,
    synth_dataset,
)
from .projection import Covariance2D, ProjectedSplat, project
from .rasterizer import CloudGradients, RenderOutput, render, render_backward, tile_bin
from .reconstruct import FrameViewSet, OptimConfig, init_cloud, optimize_frame
from .losses import photometric_loss
from .synthetic import SyntheticScene

__version__ = "0.1.0"

__all__ = [
    "Camera", "look_at_camera", "orbit_cameras",
    "RemoteEmbedder", "SurrogateEmbedder",
    "EvalReport", "ablate", "clip_i", "evaluate_video", "psnr", "render_eval_videos",
    "Gaussian3D", "GaussianCloud", "covariance3d",
    "SeedVideo", "Video3D", "ingest_dataset", "load_video3d",
    "reconstruct_video", "save_video3d", "synth_dataset",
    "Covariance2D", "ProjectedSplat", "project",
    "CloudGradients", "RenderOutput", "render", "render_backward", "tile_bin",
    "FrameViewSet", "OptimConfig", "init_cloud", "optimize_frame",
    "photometric_loss", "SyntheticScene",
]
