"""Command-line surface: synth, map-build, map-prune, localize, eval, xmodal.

Exit codes: 0 success, 1 completed with degraded quality (gated or failed
frames, empty pruned map), 2 input error. Every output artifact gets a JSON
run manifest (command, config snapshot, input hashes, version, timestamps)
written next to it.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import io
from ._version import __version__
from .alignment import LossConfig
from .crossmodal import (DegenerateCorrespondencesError, estimate_confusion,
                         fit_homography, reprojection_rms, warp_mask)
from .evaluation import FrameError, bin_by_edges, compute_metrics, gate_sweep
from .geometry import CameraIntrinsics, PlanarTranslation
from .semantic_map import ColoredPointCloud, EmptyMapError, fuse_labels, voxelize_and_prune
from .solver import SearchConfig, localize_trajectory
from .synth import generate_world, nadir_view, render_truth_mask, sample_frames


def _manifest_path(out: Path) -> Path:
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _snapshot(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: str(v) if isinstance(v, Path) else v
            for k, v in vars(args).items() if k not in skip}


def _write_manifest(out: Path, args: argparse.Namespace, inputs: list,
                    started: str, extra: dict | None = None) -> None:
    config = _snapshot(args)
    if extra:
        config.update(extra)
    io.write_manifest(_manifest_path(out), command=sys.argv, config=config,
                      inputs=[p for p in inputs if p is not None and Path(p).is_file()],
                      started=started)


def _default_intrinsics(size: int = 512, focal: float = 400.0) -> CameraIntrinsics:
    c = (size - 1) / 2.0
    return CameraIntrinsics(fx=focal, fy=focal, cx=c, cy=c, width=size, height=size)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args: argparse.Namespace) -> int:
    started = io.utc_now()
    scene = io.read_scene_spec(args.scene)
    corruption = io.read_corruption_spec(args.corruption) if args.corruption else None
    if args.intrinsics:
        intr = io.read_intrinsics(args.intrinsics)
    else:
        intr = _default_intrinsics()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    world = generate_world(scene)
    io.write_labeled_ply(out / "world.ply", world)
    io.write_intrinsics(out / "intrinsics.cfg", intr)
    print(f"world: {len(world)} points -> {out / 'world.ply'}")

    if args.map_views > 0:
        _emit_map_views(out, world, intr, scene, args.map_views)

    frame_seed = args.frame_seed if args.frame_seed is not None else scene.seed + 1
    samples = sample_frames(world, intr, args.frames, seed=frame_seed,
                            t_range=args.t_range, prior_region=args.prior_region,
                            altitude=scene.altitude, corruption=corruption)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    records = []
    truth = {}
    for s in samples:
        image = frames_dir / f"{s.frame_id}.png"
        io.write_mask_png(image, s.mask)
        records.append(io.FrameRecord(
            frame_id=s.frame_id, image=Path("frames") / image.name,
            rotation=s.view.world_to_camera_rotation, height=s.view.height,
            intrinsics=Path("intrinsics.cfg"), prior=s.prior))
        truth[s.frame_id] = s.t_true
    io.write_frames_manifest(out / "frames.csv", records)
    io.write_truth_csv(out / "truth.csv", truth)
    print(f"frames: {len(samples)} -> {out / 'frames.csv'} (truth: truth.csv)")

    _write_manifest(out, args, [args.scene, args.corruption, args.intrinsics], started)
    return 0


def _emit_map_views(out: Path, world, intr: CameraIntrinsics, scene, n_views: int) -> None:
    """Uncorrupted nadir views on a grid, plus the unlabeled cloud."""
    io.write_cloud_ply(out / "cloud.ply", ColoredPointCloud(
        points=world.points, colors=np.zeros((len(world), 3), dtype=np.uint8)))
    views_dir = out / "views"
    views_dir.mkdir(exist_ok=True)
    height = 0.5 * (scene.altitude[0] + scene.altitude[1])
    side = int(np.ceil(np.sqrt(n_views)))
    span = 0.8 * scene.extent
    coords = np.linspace(-span / 2.0, span / 2.0, side) if side > 1 else np.array([0.0])
    records = []
    k = 0
    for gy in coords:
        for gx in coords:
            if k >= n_views:
                break
            view = nadir_view(intr, height)
            mask = render_truth_mask(world, view, PlanarTranslation(gx, gy))
            name = f"view_{k:04d}"
            io.write_mask_png(views_dir / f"{name}.png", mask)
            records.append(io.ViewRecord(
                frame_id=name, image=Path("views") / f"{name}.png",
                camera_center=(float(gx), float(gy), height),
                rotation=view.world_to_camera_rotation, height=height,
                intrinsics=Path("intrinsics.cfg")))
            k += 1
    io.write_views_manifest(out / "views.csv", records)
    print(f"map views: {k} -> {out / 'views.csv'} (cloud: cloud.ply)")


# ---------------------------------------------------------------------------
# map building and pruning

def cmd_map_build(args: argparse.Namespace) -> int:
    started = io.utc_now()
    cloud = io.read_cloud_ply(args.cloud)
    records = io.read_views_manifest(args.views)
    views = io.load_labeled_views(records)
    labeled = fuse_labels(cloud, views)
    out = Path(args.out)
    io.write_labeled_ply(out, labeled)
    print(f"labeled {len(labeled)} of {len(cloud)} points "
          f"({len(labeled) / len(cloud):.1%}) -> {out}")
    _write_manifest(out, args, [args.cloud, args.views], started)
    return 0


def cmd_map_prune(args: argparse.Namespace) -> int:
    started = io.utc_now()
    cloud = io.read_labeled_ply(args.map)
    edge_map = voxelize_and_prune(cloud, voxel_size=args.voxel_size)
    total_voxels = np.unique(
        np.floor(cloud.points / args.voxel_size).astype(np.int64), axis=0).shape[0]
    out = Path(args.out)
    io.write_edge_map_ply(out, edge_map)
    fraction = len(edge_map) / total_voxels if total_voxels else 0.0
    print(f"retained {len(edge_map)} of {total_voxels} voxels "
          f"({fraction:.1%}) -> {out}")
    _write_manifest(out, args, [args.map], started,
                    extra={"retained_fraction": fraction})
    if len(edge_map) == 0:
        print("warning: pruned map is empty (no class transitions)", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# localization

def cmd_localize(args: argparse.Namespace) -> int:
    started = io.utc_now()
    edge_map = io.read_edge_map_ply(args.edge_map)
    if len(edge_map) == 0:
        raise io.InputError(args.edge_map, "edge map has no voxels")
    records = io.read_frames_manifest(args.frames)
    frames = io.load_frames(records)

    loss_cfg = io.read_loss_config(args.loss) if args.loss else LossConfig()
    if args.confusion:
        conf = io.read_confusion_csv(args.confusion)
        loss_cfg = dataclasses.replace(loss_cfg, confusion=conf)
    search_cfg = io.read_search_config(args.search) if args.search else SearchConfig()

    results = localize_trajectory(edge_map, frames, loss_cfg, search_cfg,
                                  workers=args.workers)
    out = Path(args.out)
    io.write_results_jsonl(out, results)

    n_gated = sum(r.gated for r in results)
    n_failed = sum(r.error is not None for r in results)
    for r in results:
        flag = " [gated]" if r.gated else ""
        if r.error is not None:
            print(f"{r.frame_id}: FAILED ({r.error})")
        else:
            print(f"{r.frame_id}: t*=({r.t_star.tx:+.3f}, {r.t_star.ty:+.3f}) "
                  f"loss={r.loss:.4f} edges={r.edge_count}{flag}")
    print(f"{len(results)} frames, {n_gated} gated, {n_failed} failed -> {out}")
    _write_manifest(out, args, [args.edge_map, args.frames, args.loss,
                                args.search, args.confusion], started)
    return 1 if (n_gated or n_failed) else 0


# ---------------------------------------------------------------------------
# evaluation

def _metrics_row(label: str, metrics) -> list:
    return [label, metrics.n,
            f"{metrics.bias[0]:.6f}", f"{metrics.bias[1]:.6f}",
            f"{metrics.rmse_x:.6f}", f"{metrics.rmse_y:.6f}",
            f"{metrics.rmse_2d:.6f}", f"{metrics.median_2d:.6f}",
            f"{metrics.p75_2d:.6f}", f"{metrics.pct_under_2m:.2f}",
            f"{metrics.pct_over_5m:.2f}"]


_METRIC_HEADER = ["subset", "n", "bias_x", "bias_y", "rmse_x", "rmse_y",
                  "rmse_2d", "median_2d", "p75_2d", "pct_under_2m", "pct_over_5m"]


def cmd_eval(args: argparse.Namespace) -> int:
    import csv

    started = io.utc_now()
    results = io.read_results_jsonl(args.results)
    truth = io.read_truth_csv(args.truth)
    errors = []
    for r in results:
        if r.frame_id is None:
            raise io.InputError(args.results, "result record lacks a frame_id")
        if r.frame_id not in truth:
            raise io.InputError(args.truth, f"no ground truth for frame {r.frame_id!r}")
        errors.append(FrameError(
            frame_id=r.frame_id, estimated=(r.t_star.tx, r.t_star.ty),
            truth=truth[r.frame_id], edge_count=r.edge_count,
            gated=r.gated or r.error is not None))
    if not errors:
        raise io.InputError(args.results, "no results to evaluate")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bias_correct = not args.no_bias_correct
    io.write_frame_errors_jsonl(out / "frame_errors.jsonl", errors)

    subsets = [("all", errors), ("ungated", [e for e in errors if not e.gated])]
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_METRIC_HEADER)
        for label, subset in subsets:
            if subset:
                w.writerow(_metrics_row(label, compute_metrics(subset, bias_correct)))
            else:
                w.writerow([label, 0] + [""] * (len(_METRIC_HEADER) - 2))
    m = compute_metrics(errors, bias_correct)
    print(f"all frames: n={m.n} rmse_2d={m.rmse_2d:.3f} m "
          f"median={m.median_2d:.3f} m (bias corrected: {bias_correct})")

    with open(out / "bins.csv", "w", newline="") as f:
        f.write("# std convention: population (divide by N); "
                "bias correction over the full set\n")
        w = csv.writer(f)
        w.writerow(["edge_lo", "edge_hi", "n", "mean_2d", "std_2d"])
        for row in bin_by_edges(errors, args.bin_width, args.bin_origin, bias_correct):
            w.writerow([row.lo, row.hi, row.n,
                        "" if row.n == 0 else f"{row.mean_2d:.6f}",
                        "" if row.n == 0 else f"{row.std_2d:.6f}"])

    if args.gate_sweep:
        thresholds = [int(t) for t in args.gate_sweep.replace(",", " ").split()]
        with open(out / "gate_sweep.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", "n", "retained_fraction"] + _METRIC_HEADER[2:])
            for row in gate_sweep(errors, thresholds, bias_correct):
                if row.metrics is None:
                    w.writerow([row.threshold, 0, "0.000000"]
                               + [""] * (len(_METRIC_HEADER) - 2))
                else:
                    w.writerow([row.threshold, row.n, f"{row.retained_fraction:.6f}"]
                               + _metrics_row("", row.metrics)[2:])

    if args.plots:
        from .plots import plot_error_vs_edges, plot_translation_overlay
        plot_error_vs_edges(errors, out / "error_vs_edges.svg")
        plot_translation_overlay(errors, out / "translation_overlay.svg")

    _write_manifest(out, args, [args.results, args.truth], started)
    return 0


# ---------------------------------------------------------------------------
# cross-modal registration

def cmd_xmodal_fit(args: argparse.Namespace) -> int:
    started = io.utc_now()
    corr = io.read_correspondences_csv(args.correspondences)
    h = fit_homography(corr)
    rms = reprojection_rms(h, corr)
    out = Path(args.out)
    io.write_homography_json(out, h)
    print(f"homography -> {out} (reprojection RMS {rms:.6g} px over {len(corr.src)} pairs)")
    _write_manifest(out, args, [args.correspondences], started,
                    extra={"reprojection_rms": rms})
    return 0


def cmd_xmodal_warp(args: argparse.Namespace) -> int:
    started = io.utc_now()
    mask = io.read_mask_png(args.mask)
    h = io.read_homography_json(args.homography)
    width = args.width if args.width else mask.shape[1]
    height = args.height if args.height else mask.shape[0]
    warped = warp_mask(mask, h, (width, height))
    out = Path(args.out)
    io.write_mask_png(out, warped)
    print(f"warped {mask.shape[1]}x{mask.shape[0]} -> {width}x{height} -> {out}")
    _write_manifest(out, args, [args.mask, args.homography], started)
    return 0


def cmd_xmodal_confusion(args: argparse.Namespace) -> int:
    started = io.utc_now()
    pred = io.read_mask_png(args.pred)
    truth = io.read_mask_png(args.truth)
    if pred.shape != truth.shape:
        raise io.InputError(args.pred, f"shape {pred.shape} does not match "
                            f"truth {truth.shape}")
    conf = estimate_confusion(pred, truth)
    out = Path(args.out)
    io.write_confusion_csv(out, conf)
    print(f"confusion matrix ({conf.num_classes} classes) -> {out}")
    _write_manifest(out, args, [args.pred, args.truth], started)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="semloc",
        description="Map-relative localization from semantic edges: synthetic "
                    "scenes, map building, alignment, and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic world, views, and frames")
    s.add_argument("--scene", required=True, type=Path, help="scene config (key = value)")
    s.add_argument("--corruption", type=Path, help="segmentation corruption config")
    s.add_argument("--intrinsics", type=Path, help="camera intrinsics config")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--frames", type=int, default=20, help="localization frames to render")
    s.add_argument("--map-views", type=int, default=0,
                   help="also emit N mapping views plus the unlabeled cloud")
    s.add_argument("--t-range", type=float, default=8.0,
                   help="true offsets drawn from [-T, T]^2 around the prior")
    s.add_argument("--prior-region", type=float, default=0.0,
                   help="priors drawn from [-P, P]^2 around the scene center")
    s.add_argument("--frame-seed", type=int, default=None,
                   help="frame sampling seed (default: scene seed + 1)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("map-build", help="fuse per-view labels onto a point cloud")
    s.add_argument("--cloud", required=True, type=Path, help="input cloud (PLY)")
    s.add_argument("--views", required=True, type=Path, help="views manifest (CSV)")
    s.add_argument("--out", required=True, type=Path, help="labeled cloud (PLY)")
    s.set_defaults(func=cmd_map_build)

    s = sub.add_parser("map-prune", help="voxelize and keep class-transition voxels")
    s.add_argument("--map", required=True, type=Path, help="labeled cloud (PLY)")
    s.add_argument("--voxel-size", type=float, default=0.5, help="voxel edge (m)")
    s.add_argument("--out", required=True, type=Path, help="edge map (PLY)")
    s.set_defaults(func=cmd_map_prune)

    s = sub.add_parser("localize", help="estimate planar offsets for a frame batch")
    s.add_argument("--edge-map", required=True, type=Path, help="pruned edge map (PLY)")
    s.add_argument("--frames", required=True, type=Path, help="frames manifest (CSV)")
    s.add_argument("--out", required=True, type=Path, help="results (JSONL)")
    s.add_argument("--loss", type=Path, help="loss config (key = value)")
    s.add_argument("--search", type=Path, help="search config (key = value)")
    s.add_argument("--confusion", type=Path,
                   help="confusion matrix CSV enabling confusion-marginalized matching")
    s.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("eval", help="summarize localization accuracy against truth")
    s.add_argument("--results", required=True, type=Path, help="results (JSONL)")
    s.add_argument("--truth", required=True, type=Path, help="truth table (CSV)")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--no-bias-correct", action="store_true",
                   help="skip mean-error subtraction")
    s.add_argument("--bin-width", type=int, default=5500, help="edge-count bin width")
    s.add_argument("--bin-origin", type=int, default=1749, help="first bin lower edge")
    s.add_argument("--gate-sweep", type=str, default=None,
                   help="comma-separated edge-count thresholds to sweep")
    s.add_argument("--plots", action="store_true", help="emit SVG figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("xmodal", help="cross-modal label transfer utilities")
    xsub = s.add_subparsers(dest="subcommand", required=True)

    x = xsub.add_parser("fit", help="fit a homography to manual correspondences")
    x.add_argument("--correspondences", required=True, type=Path,
                   help="u_src,v_src,u_dst,v_dst CSV")
    x.add_argument("--out", required=True, type=Path, help="homography (JSON)")
    x.set_defaults(func=cmd_xmodal_fit)

    x = xsub.add_parser("warp", help="warp a mask through a homography")
    x.add_argument("--mask", required=True, type=Path, help="input mask (PNG)")
    x.add_argument("--homography", required=True, type=Path, help="homography (JSON)")
    x.add_argument("--width", type=int, default=0, help="output width (default: input)")
    x.add_argument("--height", type=int, default=0, help="output height (default: input)")
    x.add_argument("--out", required=True, type=Path, help="warped mask (PNG)")
    x.set_defaults(func=cmd_xmodal_warp)

    x = xsub.add_parser("confusion", help="estimate a confusion matrix from mask pairs")
    x.add_argument("--pred", required=True, type=Path, help="predicted mask (PNG)")
    x.add_argument("--truth", required=True, type=Path, help="reference mask (PNG)")
    x.add_argument("--out", required=True, type=Path, help="confusion matrix (CSV)")
    x.set_defaults(func=cmd_xmodal_confusion)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except io.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EmptyMapError, DegenerateCorrespondencesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
