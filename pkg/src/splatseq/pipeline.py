"""End-to-end assembly: dataset layout on disk, synthetic dataset generation,
independent per-frame reconstruction, and the cloud-video container.

Dataset layout under a root directory:

    seed/frame_%04d.png        temporal seed video, one image per frame
    frames/%04d/view_%02d.png  posed views for that frame
    frames/%04d/cameras.json   camera manifest for those views
    reference.png              the conditioning image (frame 0, view 0)
    meta.json                  fps, motion_score, resolution, counts, seeds

Every frame is reconstructed independently: frame i uses an RNG seed derived
by hashing (global_seed, i), so reconstructing any subset of frames, in any
order, serial or parallel, produces bit-identical clouds per frame.
"""

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import (
    Camera,
    cameras_to_manifest,
    manifest_to_cameras,
    orbit_cameras,
)
from .gaussians import GaussianCloud
from .images import load_png, quantize, save_png
from .rasterizer import render
from .reconstruct import FrameViewSet, OptimConfig, optimize_frame
from .synthetic import SyntheticScene
from . import video_io


class DatasetError(ValueError):
    """Base for dataset layout problems."""


class MissingFrameDirectoryError(DatasetError):
    pass


class ViewCountMismatchError(DatasetError):
    pass


class UnreadableImageError(DatasetError):
    pass


class FrameReconstructionError(RuntimeError):
    """One or more frames failed; completed clouds are kept on .partial."""

    def __init__(self, failures, partial):
        indices = ", ".join(str(i) for i, _ in failures)
        super().__init__(f"reconstruction failed for frame(s) {indices}")
        self.failures = failures
        self.partial = partial


@dataclass(frozen=True)
class SeedVideo:
    """The temporal seed: an ordered frame sequence plus its reference image."""

    frames: tuple
    fps: float = 12.0
    reference_image: np.ndarray | None = None
    motion_score: float | None = None

    def __post_init__(self):
        frames = tuple(np.asarray(f, dtype=np.float64) for f in self.frames)
        if not frames:
            raise ValueError("a seed video needs at least one frame")
        res = frames[0].shape
        if any(f.shape != res for f in frames):
            raise ValueError("all seed frames must share one resolution")
        object.__setattr__(self, "frames", frames)
        if self.reference_image is not None:
            object.__setattr__(self, "reference_image",
                               np.asarray(self.reference_image, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]


@dataclass(frozen=True)
class Video3D:
    """One gaussian cloud per seed frame, with reconstruction provenance."""

    clouds: tuple
    cameras: tuple
    provenance: dict

    def __post_init__(self):
        object.__setattr__(self, "clouds", tuple(self.clouds))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.clouds:
            raise ValueError("a cloud video needs at least one frame")

    def __len__(self) -> int:
        return len(self.clouds)


def derive_frame_seed(global_seed: int, frame_index: int) -> int:
    """Stable per-frame RNG seed; hashing keeps frames bit-reproducible in
    isolation, which is what makes per-frame independence testable."""
    digest = hashlib.sha256(f"splatseq:{global_seed}:{frame_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _frame_dir(root: Path, index: int) -> Path:
    return root / "frames" / f"{index:04d}"


def export_dataset(root, seed_video: SeedVideo, view_sets, meta_extra=None) -> None:
    """Write the on-disk dataset layout for a seed video and its view sets."""
    root = Path(root)
    (root / "seed").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seed_video.frames):
        save_png(root / "seed" / f"frame_{i:04d}.png", frame)
    reference = seed_video.reference_image
    if reference is None:
        reference = seed_video.frames[0]
    save_png(root / "reference.png", reference)

    n_views = None
    for vs in view_sets:
        d = _frame_dir(root, vs.frame_index)
        d.mkdir(parents=True, exist_ok=True)
        cameras = []
        for k, (camera, image) in enumerate(vs.views):
            save_png(d / f"view_{k:02d}.png", image)
            cameras.append(camera)
        with open(d / "cameras.json", "w", encoding="utf-8") as f:
            json.dump(cameras_to_manifest(cameras), f, sort_keys=True, indent=1)
        n_views = len(cameras)

    h, w = seed_video.resolution
    meta = {
        "fps": seed_video.fps,
        "motion_score": seed_video.motion_score,
        "resolution": [h, w],
        "n_frames": len(seed_video),
        "n_views": n_views,
    }
    if meta_extra:
        meta.update(meta_extra)
    with open(root / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=1)


def load_meta(root) -> dict:
    with open(Path(root) / "meta.json", "r", encoding="utf-8") as f:
        return json.load(f)


def ingest_dataset(root):
    """Read a dataset back as (SeedVideo, [FrameViewSet, ...])."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    meta = load_meta(root)
    n_frames = int(meta["n_frames"])

    def read_image(path: Path) -> np.ndarray:
        if not path.exists():
            raise UnreadableImageError(f"missing image {path}")
        try:
            return load_png(path)
        except Exception as exc:
            raise UnreadableImageError(f"cannot read image {path}: {exc}") from exc

    seed_frames = [read_image(root / "seed" / f"frame_{i:04d}.png") for i in range(n_frames)]
    reference = read_image(root / "reference.png")

    view_sets = []
    for i in range(n_frames):
        d = _frame_dir(root, i)
        if not d.is_dir():
            raise MissingFrameDirectoryError(f"missing frame directory {d}")
        with open(d / "cameras.json", "r", encoding="utf-8") as f:
            cameras = manifest_to_cameras(json.load(f))
        images = sorted(d.glob("view_*.png"))
        if len(images) != len(cameras):
            raise ViewCountMismatchError(
                f"frame {i}: manifest lists {len(cameras)} cameras but "
                f"{len(images)} view images are present"
            )
        views = [(cam, read_image(d / f"view_{k:02d}.png"))
                 for k, cam in enumerate(cameras)]
        view_sets.append(FrameViewSet(views=tuple(views), frame_index=i))

    seed = SeedVideo(
        frames=tuple(seed_frames),
        fps=float(meta.get("fps", 12.0)),
        reference_image=reference,
        motion_score=meta.get("motion_score"),
    )
    return seed, view_sets


def synth_dataset(scene: SyntheticScene, n_frames: int, n_views: int,
                  resolution: int, out_root, orbit_radius: float = 2.0,
                  meta_extra=None) -> None:
    """Render a synthetic scene into the dataset layout.

    Views come from a zero-elevation uniform orbit; images are the renderer's
    own output quantized to 8 bits, and the exact ground-truth clouds are
    saved alongside (gt_clouds.v3dz) for oracle comparisons. Frame 0's view 0
    doubles as the reference image, and the per-frame view-0 renders form the
    seed video.
    """
    out_root = Path(out_root)
    cameras = orbit_cameras(n_views, radius=orbit_radius,
                            width=resolution, height=resolution)
    clouds = [scene.cloud_at(i, n_frames) for i in range(n_frames)]

    seed_frames = []
    view_sets = []
    for i, cloud in enumerate(clouds):
        views = []
        for cam in cameras:
            img = quantize(render(cloud, cam).image)
            views.append((cam, img))
        seed_frames.append(views[0][1])
        view_sets.append(FrameViewSet(views=tuple(views), frame_index=i))

    seed = SeedVideo(frames=tuple(seed_frames), fps=12.0,
                     reference_image=seed_frames[0],
                     motion_score=scene.motion_amplitude)
    meta = {"scene": scene.to_dict(), "orbit_radius": orbit_radius,
            "background": list(scene.background)}
    if meta_extra:
        meta.update(meta_extra)
    export_dataset(out_root, seed, view_sets, meta_extra=meta)
    video_io.write_cloud_video(out_root / "gt_clouds.v3dz", clouds,
                               header_extra={"cameras": cameras_to_manifest(cameras)})


def load_ground_truth_clouds(root) -> list[GaussianCloud]:
    clouds, _, _ = video_io.read_cloud_video(Path(root) / "gt_clouds.v3dz")
    return clouds


def reconstruct_video(seed_video: SeedVideo, view_sets, config: OptimConfig,
                      global_seed: int = 0, n_workers: int = 1,
                      frame_indices=None) -> Video3D:
    """Reconstruct every frame independently.

    frame_indices selects a subset (default: all); results are identical to
    the matching frames of a full run. Per-frame failures are collected and
    re-raised together after the remaining frames complete.
    """
    view_sets = list(view_sets)
    if frame_indices is None:
        if len(view_sets) != len(seed_video):
            raise ValueError(
                f"need one view set per seed frame: {len(view_sets)} view sets "
                f"for {len(seed_video)} frames"
            )
        frame_indices = [vs.frame_index for vs in view_sets]
    by_index = {vs.frame_index: vs for vs in view_sets}

    def run(i: int):
        frame_config = dataclasses.replace(config, seed=derive_frame_seed(global_seed, i))
        cloud, trace = optimize_frame(by_index[i], frame_config)
        return cloud, trace

    results: dict[int, GaussianCloud] = {}
    traces: dict[int, object] = {}
    failures = []
    if n_workers <= 1:
        for i in frame_indices:
            try:
                results[i], traces[i] = run(i)
            except Exception as exc:
                failures.append((i, exc))
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = {i: pool.submit(run, i) for i in frame_indices}
            for i in frame_indices:
                try:
                    results[i], traces[i] = futures[i].result()
                except Exception as exc:
                    failures.append((i, exc))
    if failures:
        raise FrameReconstructionError(failures, partial=results)

    cameras = by_index[frame_indices[0]].cameras
    provenance = {
        "global_seed": global_seed,
        "frame_seeds": {str(i): derive_frame_seed(global_seed, i) for i in frame_indices},
        "frame_indices": list(frame_indices),
        "optim_config": config.to_dict(),
    }
    video = Video3D(
        clouds=tuple(results[i] for i in frame_indices),
        cameras=tuple(cameras),
        provenance=provenance,
    )
    video.provenance["traces"] = {i: traces[i] for i in frame_indices}
    return video


def save_video3d(path, video: Video3D) -> None:
    provenance = {k: v for k, v in video.provenance.items() if k != "traces"}
    header = {
        "cameras": cameras_to_manifest(video.cameras),
        "provenance": provenance,
    }
    video_io.write_cloud_video(
        path, video.clouds,
        frame_indices=provenance.get("frame_indices", list(range(len(video)))),
        header_extra=header,
    )


def load_video3d(path) -> Video3D:
    clouds, indices, header = video_io.read_cloud_video(path)
    provenance = dict(header.get("provenance", {}))
    provenance.setdefault("frame_indices", indices)
    cameras = tuple(manifest_to_cameras(header["cameras"])) if "cameras" in header else ()
    return Video3D(clouds=tuple(clouds), cameras=cameras, provenance=provenance)
