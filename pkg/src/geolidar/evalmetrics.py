"""Trajectory and map-quality metrics: ATE, segment-based RTE, Mean Map Entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geom import Pose, compose, inverse, quat_angle, transform_points
from .voxel_map import voxel_downsample

RTE_SEGMENT_LENGTHS = tuple(range(100, 900, 100))

TRAJECTORY_HEADER = "# geolidar trajectory v1: index tx ty tz qx qy qz qw"


@dataclass
class Trajectory:
    """Ordered frame poses, indexed by strictly increasing frame numbers."""

    indices: np.ndarray
    poses: list[Pose]

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        if len(self.indices) != len(self.poses):
            raise ValueError("index and pose counts differ")
        if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @classmethod
    def from_results(cls, results) -> "Trajectory":
        return cls(np.array([r.frame_index for r in results]), [r.pose for r in results])

    @classmethod
    def from_poses(cls, poses) -> "Trajectory":
        return cls(np.arange(len(poses)), list(poses))

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    def path_lengths(self) -> np.ndarray:
        """Cumulative path length per frame, starting at 0."""
        pos = self.positions()
        if len(pos) == 0:
            return np.zeros(0)
        steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


def read_trajectory(path) -> Trajectory:
    indices = []
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 fields, found {len(parts)}")
        indices.append(int(parts[0]))
        vals = [float(v) for v in parts[1:]]
        poses.append(Pose(vals[:3], vals[3:]))
    return Trajectory(np.asarray(indices, dtype=int), poses)


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w") as f:
        f.write(TRAJECTORY_HEADER + "\n")
        for idx, pose in zip(traj.indices, traj.poses):
            t, q = pose.t, pose.q
            f.write(
                f"{int(idx)} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                f"{q[0]:.12f} {q[1]:.12f} {q[2]:.12f} {q[3]:.12f}\n"
            )


def _check_matching(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    if not np.array_equal(est.indices, gt.indices):
        raise ValueError("trajectory frame indices do not match")


def _rigid_align(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form rigid (no scale) R, t minimizing ||R src + t - dst||^2."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    M = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def ate(est: Trajectory, gt: Trajectory, mode: str = "first_frame") -> tuple[float, float]:
    """Mean and max translational error after trajectory alignment.

    first_frame re-anchors each trajectory at its own first pose; umeyama
    applies the closed-form rigid alignment of estimated onto reference
    positions before comparing.
    """
    _check_matching(est, gt)
    if mode == "first_frame":
        e0, g0 = inverse(est.poses[0]), inverse(gt.poses[0])
        pe = np.array([compose(e0, p).t for p in est.poses])
        pg = np.array([compose(g0, p).t for p in gt.poses])
    elif mode == "umeyama":
        pe_raw = est.positions()
        pg = gt.positions()
        R, t = _rigid_align(pe_raw, pg)
        pe = pe_raw @ R.T + t
    else:
        raise ValueError(f"unknown ATE mode {mode!r}")
    err = np.linalg.norm(pe - pg, axis=1)
    return float(err.mean()), float(err.max())


def kitti_rte(est: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """Average relative error over 100-800 m segments of the reference path.

    Returns (translational error in percent, rotational error in deg/m).
    Segment ends are the first frames reaching the target path length; every
    frame starts a segment.
    """
    _check_matching(est, gt)
    cum = gt.path_lengths()
    if cum[-1] < RTE_SEGMENT_LENGTHS[0]:
        raise ValueError(
            f"trajectory path length {cum[-1]:.1f} m is shorter than the "
            f"{RTE_SEGMENT_LENGTHS[0]} m minimum segment"
        )
    t_errs = []
    r_errs = []
    for start in range(len(gt)):
        for seg_len in RTE_SEGMENT_LENGTHS:
            end = int(np.searchsorted(cum, cum[start] + seg_len, side="left"))
            if end >= len(gt):
                break
            d_gt = compose(inverse(gt.poses[start]), gt.poses[end])
            d_est = compose(inverse(est.poses[start]), est.poses[end])
            err = compose(inverse(d_est), d_gt)
            t_errs.append(np.linalg.norm(err.t) / seg_len)
            r_errs.append(quat_angle(err.q) / seg_len)
    if not t_errs:
        raise ValueError("no complete segment found")
    return 100.0 * float(np.mean(t_errs)), math.degrees(float(np.mean(r_errs)))


def mme(
    cloud: np.ndarray,
    radius: float = 1.0,
    min_neighbors: int = 10,
    chunk_size: int = 4096,
) -> tuple[float, float]:
    """Mean Map Entropy: average differential entropy of local covariances.

    Per point with at least min_neighbors points (itself included) within
    radius: h = 0.5 * ln det(2 pi e * cov).  Returns (mean entropy, fraction
    of points evaluated).  Covariances use 1/(n-1) and a 1e-9 ridge so planar
    patches stay finite.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.atleast_2d(np.asarray(cloud, dtype=float))
    n = len(pts)
    if n == 0:
        raise ValueError("empty cloud")
    tree = cKDTree(pts)
    total_h = 0.0
    evaluated = 0
    two_pi_e = 2.0 * math.pi * math.e
    for lo in range(0, n, chunk_size):
        chunk = pts[lo : lo + chunk_size]
        neighborhoods = tree.query_ball_point(chunk, radius)
        counts = np.array([len(nb) for nb in neighborhoods])
        keep = counts >= min_neighbors
        if not keep.any():
            continue
        idx = np.fromiter(
            (j for nb, k in zip(neighborhoods, keep) if k for j in nb),
            dtype=np.int64,
            count=int(counts[keep].sum()),
        )
        counts = counts[keep]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        p = pts[idx]
        s1 = np.add.reduceat(p, starts, axis=0)
        # symmetric second moments as 6 columns: xx yy zz xy xz yz
        m2 = np.add.reduceat(
            np.column_stack(
                [
                    p[:, 0] * p[:, 0],
                    p[:, 1] * p[:, 1],
                    p[:, 2] * p[:, 2],
                    p[:, 0] * p[:, 1],
                    p[:, 0] * p[:, 2],
                    p[:, 1] * p[:, 2],
                ]
            ),
            starts,
            axis=0,
        )
        nn = counts[:, None].astype(float)
        mean = s1 / nn
        cxx = (m2[:, 0] - nn[:, 0] * mean[:, 0] ** 2) / (nn[:, 0] - 1) + 1e-9
        cyy = (m2[:, 1] - nn[:, 0] * mean[:, 1] ** 2) / (nn[:, 0] - 1) + 1e-9
        czz = (m2[:, 2] - nn[:, 0] * mean[:, 2] ** 2) / (nn[:, 0] - 1) + 1e-9
        cxy = (m2[:, 3] - nn[:, 0] * mean[:, 0] * mean[:, 1]) / (nn[:, 0] - 1)
        cxz = (m2[:, 4] - nn[:, 0] * mean[:, 0] * mean[:, 2]) / (nn[:, 0] - 1)
        cyz = (m2[:, 5] - nn[:, 0] * mean[:, 1] * mean[:, 2]) / (nn[:, 0] - 1)
        det = (
            cxx * (cyy * czz - cyz**2)
            - cxy * (cxy * czz - cxz * cyz)
            + cxz * (cxy * cyz - cyy * cxz)
        )
        det = np.maximum(det, 1e-300)
        total_h += float(np.sum(0.5 * np.log(two_pi_e**3 * det)))
        evaluated += int(keep.sum())
    if evaluated == 0:
        raise ValueError("no point has enough neighbors for the entropy estimate")
    return total_h / evaluated, evaluated / n


def mme_preprocess(
    clouds,
    poses,
    crop_center=None,
    crop_extent: float = 100.0,
    voxel: float = 0.25,
) -> np.ndarray:
    """Assemble the evaluation cloud: per-frame transform and downsample,
    concatenate without joint filtering, crop to a square region.

    crop_center defaults to the composite's xy bounding-box center.
    """
    parts = []
    for cloud, pose in zip(clouds, poses):
        placed = transform_points(pose, np.atleast_2d(np.asarray(cloud, dtype=float)))
        if len(placed):
            parts.append(voxel_downsample(placed, voxel))
    if not parts:
        return np.zeros((0, 3))
    composite = np.vstack(parts)
    if crop_center is None:
        lo = composite[:, :2].min(axis=0)
        hi = composite[:, :2].max(axis=0)
        crop_center = 0.5 * (lo + hi)
    cx, cy = float(crop_center[0]), float(crop_center[1])
    half = 0.5 * crop_extent
    keep = (np.abs(composite[:, 0] - cx) <= half) & (np.abs(composite[:, 1] - cy) <= half)
    return composite[keep]
