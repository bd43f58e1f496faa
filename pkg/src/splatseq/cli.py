"""Command-line interface.

Subcommands mirror the pipeline stages: synth-data, reconstruct, render,
evaluate, ablate, plus verify for checking embedded config hashes. A JSON
config file can provide defaults; explicit flags win. Every output carries
the resolved run configuration and its SHA-256 hash.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 external service
unreachable.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

from . import video_io
from .embedders import EmbedderConnectionError, EmbedderError, RemoteEmbedder, SurrogateEmbedder
from .evaluate import (
    ablate,
    evaluate_video,
    format_ablation_table,
    format_score_table,
    validate_report,
)
from .images import load_png, save_png
from .pipeline import (
    FrameReconstructionError,
    Video3D,
    ingest_dataset,
    load_ground_truth_clouds,
    load_meta,
    load_video3d,
    reconstruct_video,
    save_video3d,
    synth_dataset,
)
from .rasterizer import render
from .cameras import load_camera_manifest, orbit_cameras
from .reconstruct import OptimConfig
from .synthetic import SyntheticScene

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_SERVICE = 3

EMBED_ENDPOINT_ENV = "SPLATSEQ_EMBED_ENDPOINT"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _load_file_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        loaded = json.load(f)
    if not isinstance(loaded, dict):
        raise ValueError("config file must hold a JSON object")
    return loaded


def resolve_config(file_config: dict, flag_values: dict) -> dict:
    """File config supplies defaults; flags that were actually set win."""
    merged = dict(file_config)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def _make_embedder(spec: str):
    if spec == "surrogate":
        return SurrogateEmbedder()
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteEmbedder(spec)
    raise ValueError(f"embedder must be 'surrogate' or an http(s) URL, got {spec!r}")


def _optim_config_from(resolved: dict) -> OptimConfig:
    fields = {f.name for f in dataclasses.fields(OptimConfig)}
    return OptimConfig(**{k: v for k, v in resolved.items() if k in fields})


def cmd_synth_data(args) -> int:
    resolved = resolve_config(_load_file_config(args.config), {
        "frames": args.frames, "views": args.views, "resolution": args.resolution,
        "motion_amplitude": args.motion_amplitude, "seed": args.seed,
        "scene_gaussians": args.scene_gaussians,
    })
    resolved.setdefault("frames", 25)
    resolved.setdefault("views", 18)
    resolved.setdefault("resolution", 256)
    resolved.setdefault("motion_amplitude", 0.3)
    resolved.setdefault("seed", 0)
    resolved.setdefault("scene_gaussians", 200)
    if resolved["views"] < 1 or resolved["frames"] < 1 or resolved["resolution"] < 1:
        print("error: frames, views, and resolution must be positive", file=sys.stderr)
        return EXIT_USAGE

    scene = SyntheticScene(n_gaussians=resolved["scene_gaussians"],
                           seed=resolved["seed"],
                           motion_amplitude=resolved["motion_amplitude"])
    synth_dataset(scene, n_frames=resolved["frames"], n_views=resolved["views"],
                  resolution=resolved["resolution"], out_root=args.out,
                  meta_extra={"config": resolved, "config_hash": config_hash(resolved)})
    print(f"wrote dataset with {resolved['frames']} frames x {resolved['views']} views "
          f"to {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    resolved = resolve_config(_load_file_config(args.config), {
        "n_splats": args.splats, "n_steps": args.steps, "seed": args.seed,
        "workers": args.workers,
    })
    resolved.setdefault("workers", 1)
    resolved.setdefault("seed", 0)

    seed_video, view_sets = ingest_dataset(args.dataset)
    meta = load_meta(args.dataset)
    if "background" in meta:
        resolved.setdefault("background", tuple(meta["background"]))
    optim = _optim_config_from(resolved)
    # worker count is pure scheduling: results are bit-identical for any value,
    # so it stays out of the recorded config (else checksums would disagree)
    resolved_full = {**optim.to_dict(), "global_seed": resolved["seed"],
                     "dataset": str(args.dataset)}
    digest = config_hash(resolved_full)

    try:
        video = reconstruct_video(seed_video, view_sets, optim,
                                  global_seed=resolved["seed"],
                                  n_workers=resolved["workers"])
    except FrameReconstructionError as exc:
        for index, error in exc.failures:
            print(f"frame {index} failed: {error}", file=sys.stderr)
        if exc.partial:
            indices = sorted(exc.partial)
            partial = Video3D(
                clouds=tuple(exc.partial[i] for i in indices),
                cameras=tuple(view_sets[0].cameras),
                provenance={"config_hash": digest, "run_config": resolved_full,
                            "frame_indices": indices, "partial": True},
            )
            save_video3d(args.out, partial)
            print(f"wrote {len(indices)} completed frame(s) to {args.out}", file=sys.stderr)
        return EXIT_RUNTIME

    video.provenance.update({"config_hash": digest, "run_config": resolved_full})
    save_video3d(args.out, video)
    traces = video.provenance.get("traces", {})
    for i in sorted(traces):
        losses = traces[i].losses
        if losses:
            print(f"frame {i}: loss {losses[0]:.4f} -> {losses[-1]:.4f} "
                  f"({len(losses)} steps)")
        else:
            print(f"frame {i}: initialization only (0 steps)")
    print(f"wrote {len(video)} frame(s) to {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    resolved = {"video": str(args.video), "cameras": args.cameras,
                "camera_file": str(args.camera_file) if args.camera_file else None,
                "resolution": args.resolution, "radius": args.radius}
    video = load_video3d(args.video)
    out_root = Path(args.out)
    if args.camera_file:
        cameras = load_camera_manifest(args.camera_file)
    else:
        resolution = args.resolution or (video.cameras[0].width if video.cameras else 256)
        cameras = orbit_cameras(args.cameras, radius=args.radius,
                                width=resolution, height=resolution)
    for k, cam in enumerate(cameras):
        cam_dir = out_root / f"cam_{k:02d}"
        cam_dir.mkdir(parents=True, exist_ok=True)
        for f, cloud in enumerate(video.clouds):
            save_png(cam_dir / f"frame_{f:04d}.png", render(cloud, cam).image)
    with open(out_root / "run.json", "w", encoding="utf-8") as f:
        json.dump({"config": resolved, "config_hash": config_hash(resolved)},
                  f, sort_keys=True, indent=1)
    print(f"rendered {len(video)} frame(s) from {len(cameras)} camera(s) into {out_root}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    resolved = {
        "video": str(args.video), "reference": str(args.reference),
        "embedder": args.embedder, "cameras": args.cameras,
        "resolution": args.resolution, "radius": args.radius,
        "ground_truth": str(args.ground_truth) if args.ground_truth else None,
    }
    digest = config_hash(resolved)
    video = load_video3d(args.video)
    reference = load_png(args.reference)
    embedder = _make_embedder(args.embedder)
    gt_clouds = None
    if args.ground_truth:
        gt_clouds, _, _ = video_io.read_cloud_video(args.ground_truth)

    resolution = args.resolution or (video.cameras[0].width if video.cameras else 256)
    report = evaluate_video(video, reference, embedder, gt_clouds=gt_clouds,
                            n_cameras=args.cameras, resolution=resolution,
                            radius=args.radius,
                            config={**resolved, "config_hash": digest})
    report.save_json(args.out)
    rows = [(Path(args.video).stem, report.clip_i)]
    table = format_score_table(rows)
    if report.psnr is not None:
        table += "\n\n" + format_score_table([(Path(args.video).stem, report.psnr)],
                                             headers=("Video", "PSNR-dB"), precision=2)
    Path(args.out).with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_ablate(args) -> int:
    with open(args.grid, "r", encoding="utf-8") as f:
        grid = json.load(f)
    if not isinstance(grid, dict) or not grid.get("n_views") and not grid.get("motion_amplitudes"):
        print("error: grid must name n_views and/or motion_amplitudes", file=sys.stderr)
        return EXIT_USAGE
    resolved = resolve_config(_load_file_config(args.config), {})
    optim = _optim_config_from(resolved)
    embedder = _make_embedder(args.embedder)
    digest = config_hash({"grid": grid, "optim": optim.to_dict()})

    cells = ablate(args.dataset, grid, optim, embedder, out_dir=args.out,
                   eval_resolution=args.resolution, n_workers=args.workers)
    failed = [c for c in cells if c["error"]]
    summary_lines = [f"run config hash: {digest}"]
    if any(c["report"] for c in cells):
        if grid.get("n_views"):
            summary_lines.append(format_ablation_table(cells, key="n_views"))
            if any(c["report"] and c["report"].psnr is not None for c in cells):
                summary_lines.append(format_ablation_table(cells, key="n_views",
                                                           metric="psnr"))
        if grid.get("motion_amplitudes"):
            summary_lines.append(format_ablation_table(cells, key="motion_amplitude"))
    for cell in failed:
        summary_lines.append(f"cell {cell['config']} FAILED: {cell['error']}")
    summary = "\n\n".join(summary_lines)
    print(summary)
    with open(Path(args.out) / "summary.txt", "w", encoding="utf-8") as f:
        f.write(summary + "\n")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_verify(args) -> int:
    """Recompute the config hash embedded in an output file."""
    path = Path(args.path)
    if path.suffix == ".v3dz":
        _, _, header = video_io.read_cloud_video(path)
        provenance = header.get("provenance", {})
        recorded = provenance.get("config_hash")
        config = provenance.get("run_config")
    elif path.name == "meta.json" or path.is_dir():
        meta = load_meta(path if path.is_dir() else path.parent)
        recorded = meta.get("config_hash")
        config = meta.get("config")
    else:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        if "clip_i" in payload:
            validate_report(payload)
            config = dict(payload.get("config", {}))
            recorded = config.pop("config_hash", None)
        else:
            config = payload.get("config")
            recorded = payload.get("config_hash")
    if recorded is None or config is None:
        print("no embedded config hash found", file=sys.stderr)
        return EXIT_RUNTIME
    actual = config_hash(config)
    if actual != recorded:
        print(f"hash mismatch: recorded {recorded}, recomputed {actual}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"config hash verified: {recorded}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatseq",
        description="Per-frame gaussian-splat reconstruction and evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic oracle dataset")
    p.add_argument("--scene-gaussians", type=int, dest="scene_gaussians")
    p.add_argument("--frames", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--motion-amplitude", type=float, dest="motion_amplitude")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("reconstruct", help="fit one cloud per frame of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splats", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="dump PNG orbit renders of a cloud video")
    p.add_argument("--video", required=True)
    p.add_argument("--cameras", type=int, default=10)
    p.add_argument("--camera-file", dest="camera_file")
    p.add_argument("--resolution", type=int)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="score a cloud video against its reference image")
    p.add_argument("--video", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--embedder", default=os.environ.get(EMBED_ENDPOINT_ENV, "surrogate"))
    p.add_argument("--cameras", type=int, default=10)
    p.add_argument("--resolution", type=int)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a view-count / motion ablation grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--embedder", default=os.environ.get(EMBED_ENDPOINT_ENV, "surrogate"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="recheck the config hash embedded in an output")
    p.add_argument("path")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EmbedderConnectionError,) as exc:
        print(f"error: embedding service unavailable: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except EmbedderError as exc:
        print(f"error: embedder failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
