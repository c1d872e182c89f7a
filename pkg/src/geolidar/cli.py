"""Command-line interface.

Subcommands cover the whole workflow: synthesize a test world, build a
sparse reference map from footprints and elevation grids, run the mapping
pipeline over a scan directory, and evaluate trajectories and map quality.
Any failure exits nonzero with a single-line diagnostic and removes partial
outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import refmap as refmap_mod
from .cloud_io import read_cloud, write_cloud
from .evalmetrics import (
    Trajectory,
    ate,
    kitti_rte,
    mme,
    mme_preprocess,
    read_trajectory,
    write_trajectory,
)
from .geom import Pose, quat_from_axis_angle, quat_mul, quat_to_matrix
from .pipeline import PipelineConfig, read_config, run
from .refmap import ReferenceMap, build_reference_map, grid_ground_lookup
from .simulate import SensorModel, generate_world, simulate_scan

META_SUFFIX = ".meta.json"


class _OutputGuard:
    """Removes the registered output files if the command fails midway."""

    def __init__(self, paths):
        self.paths = [Path(p) for p in paths if p]

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.paths:
                if p.is_file():
                    p.unlink()
        return False


def _scan_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"scan directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".bin", ".xyz", ".txt"))
    if not files:
        raise ValueError(f"no scan files in {directory}")
    return files


def _apply_yaw_correction(points: np.ndarray, yaw_deg: float) -> np.ndarray:
    if yaw_deg == 0.0:
        return points
    R = quat_to_matrix(quat_from_axis_angle([0, 0, 1], math.radians(yaw_deg)))
    return points @ R.T


def cmd_build_refmap(args) -> int:
    out = Path(args.out)
    with _OutputGuard([out, str(out) + META_SUFFIX]):
        footprint_sets = [refmap_mod.read_footprints(p) for p in args.footprints]
        grids = [refmap_mod.read_grid(p) for p in args.grid]
        reference = build_reference_map(
            footprint_sets, grids, ground_lookup=grid_ground_lookup(grids), edge=args.edge
        )
        write_cloud(out, reference.points, fmt="bin_xyz")
        Path(str(out) + META_SUFFIX).write_text(
            json.dumps(
                {
                    "version": 1,
                    "crs": reference.crs_id,
                    "origin_offset": reference.origin_offset.tolist(),
                },
                indent=1,
            )
        )
    print(f"reference map: {len(reference.points)} points -> {out}")
    print(f"origin offset: {reference.origin_offset.tolist()} ({reference.crs_id or 'no CRS'})")
    return 0


def _load_reference(path) -> ReferenceMap:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"reference map not found: {path}")
    meta_path = Path(str(path) + META_SUFFIX)
    if not meta_path.is_file():
        raise FileNotFoundError(f"reference map metadata sidecar not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    return ReferenceMap(
        read_cloud(path, fmt="bin_xyz"),
        crs_id=meta.get("crs", ""),
        origin_offset=np.asarray(meta.get("origin_offset", [0, 0, 0]), dtype=float),
    )


def cmd_map(args) -> int:
    with _OutputGuard([args.out_traj, args.out_map]):
        reference = _load_reference(args.refmap)
        config = read_config(args.config) if args.config else PipelineConfig()
        if args.init_quat is not None:
            q = np.asarray(args.init_quat, dtype=float)
            t = np.asarray(args.init[:3], dtype=float)
        else:
            x, y, z, yaw_deg = args.init
            t = np.array([x, y, z])
            q = quat_from_axis_angle([0, 0, 1], math.radians(yaw_deg))
        manual = Pose(t, q)

        files = _scan_files(args.scans)
        clouds = [_apply_yaw_correction(read_cloud(p), args.yaw_correction) for p in files]
        results, out_map = run(reference, clouds, manual, config)

        write_trajectory(args.out_traj, Trajectory.from_results(results))
        if args.out_map:
            write_cloud(args.out_map, out_map, fmt="bin_xyz")
    n_static = sum(r.static_frame for r in results)
    n_abs = sum(r.s2m_used for r in results)
    n_degraded = sum(r.degraded for r in results)
    print(f"frames: {len(results)}  map points: {len(out_map)}")
    print(f"scan-to-map used: {n_abs}  static: {n_static}  degraded: {n_degraded}")
    print(f"trajectory -> {args.out_traj}" + (f"  map -> {args.out_map}" if args.out_map else ""))
    return 0


def cmd_eval_ate(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    mean, worst = ate(est, gt, mode=args.mode)
    print(f"mode    {args.mode}")
    print(f"frames  {len(est)}")
    print(f"mean_m  {mean:.4f}")
    print(f"max_m   {worst:.4f}")
    return 0


def cmd_eval_rte(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    trans_pct, rot_deg_m = kitti_rte(est, gt)
    print(f"frames         {len(est)}")
    print(f"trans_percent  {trans_pct:.4f}")
    print(f"rot_deg_per_m  {rot_deg_m:.6f}")
    return 0


def cmd_eval_mme(args) -> int:
    traj = read_trajectory(args.traj)
    files = _scan_files(args.scans)
    if len(files) != len(traj):
        raise ValueError(f"{len(files)} scans but {len(traj)} trajectory frames")
    clouds = (read_cloud(p) for p in files)
    crop_center = tuple(args.crop) if args.crop else None
    composite = mme_preprocess(
        clouds, traj.poses, crop_center=crop_center, crop_extent=args.extent, voxel=args.voxel
    )
    if len(composite) == 0:
        raise ValueError("no points left after cropping")
    mean_h, fraction = mme(composite, radius=args.radius, min_neighbors=args.min_neighbors)
    print(f"points             {len(composite)}")
    print(f"mean_map_entropy   {mean_h:.4f}")
    print(f"evaluated_fraction {fraction:.3f}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scans_dir = out / "scans"
    scans_dir.mkdir(exist_ok=True)
    world = generate_world(
        args.seed,
        extent=args.extent,
        building_count=args.buildings,
        frame_spacing=args.spacing,
        path=args.path,
    )
    sensor = SensorModel(
        channels=args.channels,
        horizontal_steps=args.hsteps,
        max_range=args.max_range,
        noise_sigma=args.noise,
    )
    refmap_mod.write_footprints(
        out / "footprints.json",
        refmap_mod.FootprintSet(world.footprints, crs=world.ground.crs),
    )
    refmap_mod.write_grid(out / "ground.asc", world.ground)
    write_trajectory(out / "gt_traj.txt", world.trajectory)
    for k, pose in enumerate(world.trajectory.poses):
        scan = simulate_scan(world, pose, sensor, seed=(world.seed, k))
        write_cloud(scans_dir / f"{k:06d}.bin", scan, fmt="bin_xyz")
    (out / "meta.json").write_text(
        json.dumps(
            {
                "version": 1,
                "seed": world.seed,
                "extent": world.extent,
                "buildings": len(world.footprints),
                "frames": len(world.trajectory),
                "sensor": {
                    "channels": sensor.channels,
                    "horizontal_steps": sensor.horizontal_steps,
                    "vfov_deg": list(sensor.vfov_deg),
                    "max_range": sensor.max_range,
                    "noise_sigma": sensor.noise_sigma,
                },
            },
            indent=1,
        )
    )
    print(f"world seed {world.seed}: {len(world.footprints)} buildings, "
          f"{len(world.trajectory)} frames -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geolidar",
        description="Georeferenced LiDAR mapping against sparse building/surface priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-refmap", help="build a sparse reference map")
    p.add_argument("--footprints", action="append", default=[], help="footprint JSON file")
    p.add_argument("--grid", action="append", default=[], help="ASCII elevation grid file")
    p.add_argument("--edge", type=float, default=0.5, help="wall tessellation edge (m)")
    p.add_argument("--out", required=True, help="output .bin point file")
    p.set_defaults(func=cmd_build_refmap)

    p = sub.add_parser("map", help="run the mapping pipeline over a scan directory")
    p.add_argument("--refmap", required=True)
    p.add_argument("--scans", required=True)
    p.add_argument("--init", type=float, nargs=4, required=True,
                   metavar=("X", "Y", "Z", "YAW_DEG"),
                   help="manual first-frame pose, global coordinates, yaw in degrees")
    p.add_argument("--init-quat", type=float, nargs=4, default=None,
                   metavar=("QX", "QY", "QZ", "QW"),
                   help="full initial rotation (overrides the yaw)")
    p.add_argument("--config", default=None, help="key = value pipeline config file")
    p.add_argument("--yaw-correction", type=float, default=0.0,
                   help="intrinsic yaw correction applied to every scan (degrees)")
    p.add_argument("--out-traj", required=True)
    p.add_argument("--out-map", default=None)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("eval-ate", help="absolute trajectory error")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("first_frame", "umeyama"), default="first_frame")
    p.set_defaults(func=cmd_eval_ate)

    p = sub.add_parser("eval-rte", help="relative trajectory error, 100-800 m segments")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_rte)

    p = sub.add_parser("eval-mme", help="mean map entropy of the assembled map")
    p.add_argument("--scans", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--crop", type=float, nargs=2, default=None, metavar=("CX", "CY"))
    p.add_argument("--extent", type=float, default=100.0)
    p.add_argument("--voxel", type=float, default=0.25)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--min-neighbors", type=int, default=10)
    p.set_defaults(func=cmd_eval_mme)

    p = sub.add_parser("synth", help="generate a synthetic world with scans")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--extent", type=float, default=200.0)
    p.add_argument("--buildings", type=int, default=12)
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--path", choices=("loop", "straight"), default="loop")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--hsteps", type=int, default=512)
    p.add_argument("--max-range", type=float, default=60.0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
