"""Evaluation protocol: orbit renders of a cloud video, reference-similarity
scoring (mean cosine over every view and frame), PSNR against ground truth,
and the view-count / motion ablation harness.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import orbit_cameras
from .embedders import EmbedderConnectionError
from .pipeline import (
    Video3D,
    ingest_dataset,
    load_ground_truth_clouds,
    load_meta,
    reconstruct_video,
    synth_dataset,
)
from .rasterizer import render
from .reconstruct import FrameViewSet, OptimConfig
from .synthetic import SyntheticScene

PSNR_CAP_DB = 99.0
DEFAULT_EVAL_CAMERAS = 10


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalReport:
    """Similarity score plus the per-view, per-frame matrix it is the mean of."""

    clip_i: float
    similarity: np.ndarray  # (n_views, n_frames)
    embedder: str
    config: dict
    psnr: float | None = None
    psnr_matrix: np.ndarray | None = None

    def __post_init__(self):
        sim = np.asarray(self.similarity, dtype=np.float64)
        object.__setattr__(self, "similarity", sim)
        if sim.ndim != 2:
            raise ValueError("similarity must be a (views, frames) matrix")
        if np.any(sim < -1.0 - 1e-9) or np.any(sim > 1.0 + 1e-9):
            raise ValueError("cosine similarities must lie in [-1, 1]")
        if abs(self.clip_i - float(sim.mean())) > 1e-12:
            raise ValueError("clip_i must equal the similarity matrix mean")
        if self.psnr_matrix is not None:
            object.__setattr__(self, "psnr_matrix",
                               np.asarray(self.psnr_matrix, dtype=np.float64))

    def to_dict(self) -> dict:
        d = {
            "clip_i": self.clip_i,
            "similarity": self.similarity.tolist(),
            "embedder": self.embedder,
            "config": self.config,
            "psnr": self.psnr,
        }
        if self.psnr_matrix is not None:
            d["psnr_matrix"] = self.psnr_matrix.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            clip_i=d["clip_i"],
            similarity=np.asarray(d["similarity"], dtype=np.float64),
            embedder=d["embedder"],
            config=d.get("config", {}),
            psnr=d.get("psnr"),
            psnr_matrix=np.asarray(d["psnr_matrix"], dtype=np.float64)
            if d.get("psnr_matrix") is not None else None,
        )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=1)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["clip_i", "similarity", "embedder", "config"],
    "properties": {
        "clip_i": {"type": "number", "minimum": -1.0, "maximum": 1.0},
        "similarity": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "embedder": {"type": "string"},
        "config": {"type": "object"},
        "psnr": {"type": ["number", "null"]},
        "psnr_matrix": {"type": "array"},
    },
}


def validate_report(d: dict) -> None:
    """Structural check of a report dict against REPORT_SCHEMA."""
    if not isinstance(d, dict):
        raise ValueError("report must be a JSON object")
    for key in REPORT_SCHEMA["required"]:
        if key not in d:
            raise ValueError(f"report missing required key {key!r}")
    if not isinstance(d["clip_i"], (int, float)) or not -1.0 <= d["clip_i"] <= 1.0:
        raise ValueError("clip_i must be a number in [-1, 1]")
    sim = d["similarity"]
    if not (isinstance(sim, list) and sim and all(isinstance(row, list) for row in sim)):
        raise ValueError("similarity must be a nonempty list of rows")
    width = len(sim[0])
    for row in sim:
        if len(row) != width or not all(isinstance(v, (int, float)) for v in row):
            raise ValueError("similarity rows must be equal-length numeric lists")
    if not isinstance(d["embedder"], str):
        raise ValueError("embedder must be a string")
    if not isinstance(d["config"], dict):
        raise ValueError("config must be an object")
    if d.get("psnr") is not None and not isinstance(d["psnr"], (int, float)):
        raise ValueError("psnr must be a number or null")


def psnr(rendered: np.ndarray, ground_truth: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; identical images
    report the 99 dB cap instead of infinity."""
    rendered = np.asarray(rendered, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if rendered.shape != ground_truth.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {ground_truth.shape}")
    mse = float(np.mean((rendered - ground_truth) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * float(np.log10(1.0 / mse)), PSNR_CAP_DB)


def render_eval_videos(video: Video3D, n_cameras: int = DEFAULT_EVAL_CAMERAS,
                       resolution: int = 256, radius: float = 2.0,
                       elevation: float = 0.0, look_at=(0.0, 0.0, 0.0)):
    """Render one image sequence per evaluation camera.

    Cameras are a uniform zero-elevation orbit by default; sequence k holds
    one render of every cloud in frame order.
    """
    cameras = orbit_cameras(n_cameras, radius=radius, elevation=elevation,
                            look_at=look_at, width=resolution, height=resolution)
    return [[render(cloud, cam).image for cloud in video.clouds] for cam in cameras]


def clip_i(reference: np.ndarray, videos, embedder, config=None) -> EvalReport:
    """Mean cosine similarity between the reference image's embedding and the
    embedding of every frame of every rendered sequence.

    Embeddings are re-normalized so the cosine is exactly a dot product.
    """
    def unit_embed(image, where):
        try:
            v = np.asarray(embedder.embed(image), dtype=np.float64)
        except EmbedderConnectionError as exc:
            # connectivity keeps its type so callers can exit distinctly
            raise EmbedderConnectionError(f"{where}: {exc}") from exc
        except Exception as exc:
            raise EvalError(f"embedder failed on {where}: {exc}") from exc
        return v / np.linalg.norm(v)

    ref = unit_embed(reference, "reference image")
    videos = [list(seq) for seq in videos]
    n_views = len(videos)
    n_frames = len(videos[0]) if videos else 0
    similarity = np.zeros((n_views, n_frames))
    for v, seq in enumerate(videos):
        if len(seq) != n_frames:
            raise ValueError("all rendered sequences must have the same length")
        for f, frame in enumerate(seq):
            similarity[v, f] = float(ref @ unit_embed(frame, f"view {v} frame {f}"))
    return EvalReport(
        clip_i=float(similarity.mean()),
        similarity=similarity,
        embedder=getattr(embedder, "identifier", embedder.__class__.__name__),
        config=config or {},
    )


def decimate_views(n_total: int, k: int) -> np.ndarray:
    """Uniform decimation of an ordered orbit: every (n_total/k)-th view."""
    if k < 1 or k > n_total:
        raise ValueError(f"cannot take {k} views from {n_total}")
    if n_total % k != 0:
        raise ValueError(f"{k} does not evenly divide the {n_total}-view orbit")
    return np.arange(0, n_total, n_total // k)


def subset_view_set(vs: FrameViewSet, indices) -> FrameViewSet:
    return FrameViewSet(views=tuple(vs.views[i] for i in indices),
                        frame_index=vs.frame_index)


def evaluate_video(video: Video3D, reference: np.ndarray, embedder,
                   gt_clouds=None, n_cameras: int = DEFAULT_EVAL_CAMERAS,
                   resolution: int = 256, radius: float = 2.0,
                   config=None) -> EvalReport:
    """Full protocol for one video: orbit renders, similarity, optional PSNR
    against ground-truth clouds rendered through the same cameras."""
    videos = render_eval_videos(video, n_cameras=n_cameras, resolution=resolution,
                                radius=radius)
    report = clip_i(reference, videos, embedder, config=config)
    if gt_clouds is None:
        return report
    gt_video = Video3D(clouds=tuple(gt_clouds), cameras=video.cameras or (),
                       provenance={"ground_truth": True})
    gt_videos = render_eval_videos(gt_video, n_cameras=n_cameras,
                                   resolution=resolution, radius=radius)
    matrix = np.zeros((n_cameras, len(video)))
    for v in range(n_cameras):
        for f in range(len(video)):
            matrix[v, f] = psnr(videos[v][f], gt_videos[v][f])
    return dataclasses.replace(report, psnr=float(matrix.mean()), psnr_matrix=matrix)


def ablate(dataset_root, grid: dict, config: OptimConfig, embedder,
           out_dir=None, n_cameras: int = DEFAULT_EVAL_CAMERAS,
           eval_resolution: int | None = None, n_workers: int = 1):
    """Run the evaluation grid: view counts x motion amplitudes x seeds.

    View subsets decimate the ordered orbit uniformly. Motion amplitudes
    other than the dataset's own require a synthetic dataset (its meta.json
    carries the scene descriptor); each amplitude is synthesized into a
    sibling directory. Failed cells are recorded and the rest continue.

    Returns a list of cell dicts: {"config": ..., "report": EvalReport|None,
    "error": str|None}.
    """
    dataset_root = Path(dataset_root)
    view_counts = list(grid.get("n_views", [])) or [None]
    amplitudes = list(grid.get("motion_amplitudes", [])) or [None]
    seeds = list(grid.get("seeds", [0]))
    if not view_counts or not seeds:
        raise ValueError("ablation grid must name at least one n_views and one seed")

    meta = load_meta(dataset_root)
    roots = {}
    for amp in amplitudes:
        if amp is None or amp == meta.get("motion_score"):
            roots[amp] = dataset_root
            continue
        if "scene" not in meta:
            raise ValueError(
                "motion ablation requires a synthetic dataset (meta.json has no scene)")
        variant_root = dataset_root.parent / f"{dataset_root.name}_motion_{amp:g}"
        if not (variant_root / "meta.json").exists():
            scene = SyntheticScene.from_dict({**meta["scene"], "motion_amplitude": amp})
            synth_dataset(scene, n_frames=meta["n_frames"], n_views=meta["n_views"],
                          resolution=meta["resolution"][0], out_root=variant_root,
                          orbit_radius=meta.get("orbit_radius", 2.0))
        roots[amp] = variant_root

    cells = []
    for amp in amplitudes:
        root = roots[amp]
        seed_video, view_sets = ingest_dataset(root)
        try:
            gt_clouds = load_ground_truth_clouds(root)
        except Exception:
            gt_clouds = None
        root_meta = load_meta(root)
        resolution = eval_resolution or root_meta["resolution"][0]
        n_total = root_meta["n_views"]
        for n_views in view_counts:
            for seed in seeds:
                cell_config = {"n_views": n_views or n_total,
                               "motion_amplitude": amp if amp is not None
                               else root_meta.get("motion_score"),
                               "seed": seed}
                try:
                    indices = decimate_views(n_total, n_views or n_total)
                    subsets = [subset_view_set(vs, indices) for vs in view_sets]
                    video = reconstruct_video(seed_video, subsets, config,
                                              global_seed=seed, n_workers=n_workers)
                    report = evaluate_video(
                        video, seed_video.reference_image, embedder,
                        gt_clouds=gt_clouds, n_cameras=n_cameras,
                        resolution=resolution,
                        radius=root_meta.get("orbit_radius", 2.0),
                        config=cell_config)
                    cells.append({"config": cell_config, "report": report, "error": None})
                except Exception as exc:
                    cells.append({"config": cell_config, "report": None,
                                  "error": f"{type(exc).__name__}: {exc}"})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, cell in enumerate(cells):
            if cell["report"] is not None:
                cell["report"].save_json(out_dir / f"cell_{k:03d}.json")
        with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
            json.dump([{
                "config": c["config"],
                "clip_i": c["report"].clip_i if c["report"] else None,
                "psnr": c["report"].psnr if c["report"] else None,
                "error": c["error"],
            } for c in cells], f, sort_keys=True, indent=1)
    return cells


def format_score_table(rows, headers=("Model", "CLIP-I"), precision: int = 4) -> str:
    """Aligned two-column text table, the shape used for score comparisons."""
    entries = [(str(label), f"{value:.{precision}f}") for label, value in rows]
    left = max(len(headers[0]), *(len(e[0]) for e in entries))
    right = max(len(headers[1]), *(len(e[1]) for e in entries))
    lines = [f"{headers[0]:<{left}}  {headers[1]:>{right}}",
             "-" * (left + right + 2)]
    lines += [f"{label:<{left}}  {value:>{right}}" for label, value in entries]
    return "\n".join(lines)


def format_ablation_table(cells, key: str = "n_views", metric: str = "clip_i") -> str:
    """Summary table for ablation cells, averaged per grid value."""
    by_value = {}
    for cell in cells:
        if cell["report"] is None:
            continue
        value = cell["config"][key]
        metric_value = getattr(cell["report"], metric)
        if metric_value is not None:
            by_value.setdefault(value, []).append(metric_value)
    rows = [(value, float(np.mean(scores)))
            for value, scores in sorted(by_value.items())]
    header = {"n_views": "Number of views", "motion_amplitude": "Motion score"}.get(key, key)
    return format_score_table(rows, headers=(header, metric.upper().replace("_", "-")),
                              precision=2 if metric == "psnr" else 4)
