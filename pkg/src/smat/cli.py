"""Command-line surface: simulate | run | eval-map | eval-mot | ablate | nav-step.

Every output file is a deterministic function of (input files, seed, flags);
wall-clock timings are printed to stdout only and never written to files.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import formats, nav
from .backend import BackEndParams
from .frontend import FrontEndParams
from .geometry import ConfigError, RangeImageConfig, ValidationError, VoxelMap
from .metrics import evaluate_tracking, score_map
from .pipeline import MODES, PipelineConfig, run_sequence
from .simworld import SceneConfig, generate_scene, ground_truth_maps, simulate_sequence, straight_path

_SCENE_KEYS = {
    "length": float,
    "width": float,
    "wall_height": float,
    "agent_count": int,
    "speed_min": float,
    "speed_max": float,
    "seed": int,
    "max_range": float,
    "noise_sigma": float,
    "n_scans": int,
    "rate_hz": float,
    "beam_rows": int,
    "beam_cols": int,
}


def load_scene_config(path: str | None, seed: int | None = None) -> SceneConfig:
    """Build a SceneConfig from a key=value text file plus CLI overrides."""
    raw: dict[str, object] = {}
    if path is not None:
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _SCENE_KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            raw[key] = _SCENE_KEYS[key](value)
    if seed is not None:
        raw["seed"] = seed
    n_scans = int(raw.pop("n_scans", 300))
    rate_hz = float(raw.pop("rate_hz", 10.0))
    rows = raw.pop("beam_rows", None)
    cols = raw.pop("beam_cols", None)
    if rows is not None or cols is not None:
        default_beam = SceneConfig().beam
        raw["beam"] = RangeImageConfig(
            rows=int(rows) if rows is not None else default_beam.rows,
            cols=int(cols) if cols is not None else default_beam.cols,
            fov_v=default_beam.fov_v,
        )
    speed_min = raw.pop("speed_min", None)
    speed_max = raw.pop("speed_max", None)
    if speed_min is not None or speed_max is not None:
        raw["speed_range"] = (
            float(speed_min if speed_min is not None else 1.2),
            float(speed_max if speed_max is not None else 1.8),
        )
    return SceneConfig(
        sensor_path=straight_path(n_scans, rate_hz=rate_hz),
        **raw,
    )


def _pipeline_config(args, beam: RangeImageConfig, mode: str) -> PipelineConfig:
    be = BackEndParams(
        gamma=args.gamma,
        occ_threshold=args.occ_threshold,
        map_resolution=args.resolution,
    )
    fe = FrontEndParams(bs_resolution=args.resolution)
    return PipelineConfig(front_end=fe, back_end=be, mode=mode, beam=beam)


def _write_report(path: Path, report, scan_count: int) -> None:
    """Deterministic run summary; excludes all timing measurements."""
    lines = [
        f"mode {report.mode}",
        f"scans {scan_count}",
        f"map_voxels {len(report.final_map)}",
        f"track_records {len(report.tracks)}",
        f"submaps {len(report.submaps)}",
        f"map_versions {len(report.version_history)}",
    ]
    for frame, version, voxels in report.version_history:
        lines.append(f"version {version} frame {frame} voxels {voxels}")
    for f in report.frames:
        lines.append(
            f"frame {f.index} points {f.n_points} static {f.n_static} "
            f"dynamic {f.n_dynamic} map_version {f.map_version}"
        )
    path.write_text("\n".join(lines) + "\n")


# --- subcommands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_scene_config(args.config, args.seed)
    scene = generate_scene(cfg)
    scans = simulate_sequence(scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (scan, _pose) in enumerate(scans):
        formats.write_scan(out / f"scan_{i:04d}.txt", scan)
    formats.write_poses(
        out / "poses.txt", [(scan.timestamp, pose) for scan, pose in scans]
    )
    gt_static, gt_dynamic = ground_truth_maps(scene, resolution=args.resolution, scans=scans)
    formats.write_map(out / "gt_static.txt", gt_static)
    formats.write_map(out / "gt_dynamic.txt", gt_dynamic)
    print(f"wrote {len(scans)} scans, poses, and ground-truth maps to {out}")
    return 0


def _load_or_simulate(args):
    if args.scans is not None:
        scan_dir = Path(args.scans)
        poses = formats.read_poses(args.poses)
        paths = sorted(scan_dir.glob("scan_*.txt"))
        if len(paths) != len(poses):
            raise ConfigError(
                f"{len(paths)} scan files but {len(poses)} poses in {args.poses}"
            )
        return [(formats.read_scan(p), pose) for p, (_t, pose) in zip(paths, poses)], None
    cfg = load_scene_config(args.config, args.seed)
    scene = generate_scene(cfg)
    return simulate_sequence(scene), scene


def cmd_run(args) -> int:
    posed, scene = _load_or_simulate(args)
    beam = scene.config.beam if scene is not None else RangeImageConfig()
    config = _pipeline_config(args, beam, args.mode)
    t0 = time.perf_counter()
    report = run_sequence(posed, config)
    elapsed = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_map(out / "map.txt", report.final_map)
    formats.write_tracks(out / "tracks.txt", report.tracks)
    _write_report(out / "report.txt", report, len(posed))
    print(
        f"mode {report.mode}: {len(posed)} scans -> {len(report.final_map)} voxels, "
        f"{len(report.tracks)} track records in {elapsed:.2f} s"
    )
    return 0


def cmd_eval_map(args) -> int:
    est = formats.read_map(args.map)
    gt_static = formats.read_map(args.gt_static)
    gt_dynamic = formats.read_map(args.gt_dynamic)
    score = score_map(est, gt_static, gt_dynamic, args.resolution)
    rr = f"{score.rr:.2f}" if score.rr is not None else "n/a"
    f1 = f"{score.f1:.4f}" if score.f1 is not None else "n/a"
    print(f"PR {score.pr:.2f} RR {rr} F1 {f1}")
    return 0


def cmd_eval_mot(args) -> int:
    gt = formats.read_tracks(args.gt)
    pred = formats.read_tracks(args.pred)
    score = evaluate_tracking(gt, pred, alpha=args.alpha)
    mota = f"{score.mota.value:.4f}" if score.mota.value is not None else "n/a"
    idf1 = f"{score.idf1.value:.4f}" if score.idf1.value is not None else "n/a"
    print(f"MOTA {mota} IDF1 {idf1} HOTA {score.hota.hota:.4f}")
    print(f"DetA {score.hota.deta:.4f} AssA {score.hota.assa:.4f}")
    print(
        f"TP {score.mota.tp} FN {score.mota.fn} FP {score.mota.fp} "
        f"IDSW {score.mota.idsw}"
    )
    return 0


def cmd_ablate(args) -> int:
    cfg = load_scene_config(args.config, args.seed)
    scene = generate_scene(cfg)
    scans = simulate_sequence(scene)
    gt_static, gt_dynamic = ground_truth_maps(scene, resolution=args.resolution, scans=scans)
    print(f"{'mode':<18} {'PR':>7} {'RR':>7} {'F1':>7} {'runtime_s':>10}")
    rows = []
    for mode in MODES:
        config = _pipeline_config(args, scene.config.beam, mode)
        t0 = time.perf_counter()
        report = run_sequence(scans, config)
        elapsed = time.perf_counter() - t0
        score = score_map(report.final_map, gt_static, gt_dynamic, args.resolution)
        rr = f"{score.rr:7.2f}" if score.rr is not None else f"{'n/a':>7}"
        f1 = f"{score.f1:7.4f}" if score.f1 is not None else f"{'n/a':>7}"
        print(f"{mode:<18} {score.pr:7.2f} {rr} {f1} {elapsed:10.2f}")
        rows.append((mode, score, elapsed))
    return 0


def cmd_nav_step(args) -> int:
    vmap = formats.read_map(args.map)
    grid = nav.terrain_cost(vmap.centroids(), args.cell_size)
    clusters = nav.extract_frontiers(grid)
    robot = np.array([float(v) for v in args.pose.split()])
    direction = np.array([float(v) for v in args.direction.split()])
    graph = nav.NavGraph()
    nav.extend_graph(graph, robot, clusters, direction)
    nav.aggregate_scores(graph)
    try:
        vp, frontier = nav.select_best(graph, robot)
    except nav.ExplorationExhausted as exc:
        print(f"exploration exhausted: {exc}", file=sys.stderr)
        return 1
    print(
        f"viewpoint {vp.node_id} at {vp.position[0]:.3f} {vp.position[1]:.3f} "
        f"score {vp.score:.6f}"
    )
    print(
        f"frontier {frontier.node_id} at {frontier.position[0]:.3f} "
        f"{frontier.position[1]:.3f} score {frontier.score:.6f}"
    )
    return 0


# --- argument parsing -------------------------------------------------------------


def _add_scene_args(p):
    p.add_argument("--config", help="scene config file (key=value lines)")
    p.add_argument("--seed", type=int, default=None, help="override scene seed")


def _add_map_args(p):
    p.add_argument("--resolution", type=float, default=0.2, help="voxel size in meters")
    p.add_argument("--gamma", type=float, default=0.9, help="visibility shrink factor")
    p.add_argument(
        "--occ-threshold", type=float, default=0.5, help="occupancy probability cutoff"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smat",
        description="LiDAR static mapping with moving-object tracking: "
        "simulator, pipeline, evaluation, and exploration tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate labeled scans, poses, and GT maps")
    _add_scene_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resolution", type=float, default=0.2)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the pipeline over scans (files or seeded sim)")
    _add_scene_args(p)
    p.add_argument("--scans", help="directory of scan_*.txt files")
    p.add_argument("--poses", help="pose file matching --scans")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--out-dir", required=True)
    _add_map_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-map", help="score an estimated map against GT maps")
    p.add_argument("--map", required=True)
    p.add_argument("--gt-static", required=True)
    p.add_argument("--gt-dynamic", required=True)
    p.add_argument("--resolution", type=float, default=0.2)
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("eval-mot", help="score predicted tracks against GT tracks")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_eval_mot)

    p = sub.add_parser("ablate", help="PR/RR/F1/runtime table across all five modes")
    _add_scene_args(p)
    _add_map_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("nav-step", help="select the next exploration direction")
    p.add_argument("--map", required=True)
    p.add_argument("--pose", required=True, help='robot position "x y [z]"')
    p.add_argument("--direction", required=True, help='reference direction "dx dy"')
    p.add_argument("--cell-size", type=float, default=0.5)
    p.set_defaults(func=cmd_nav_step)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and (args.scans is None) != (args.poses is None):
        parser.error("--scans and --poses must be given together")
    if args.command == "run" and args.scans is None and args.config is None and args.seed is None:
        parser.error("run needs either --scans/--poses or --config/--seed")
    try:
        return args.func(args)
    except (ConfigError, ValidationError, formats.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
