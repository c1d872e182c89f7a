"""Frame-by-frame mapping loop: scan-to-map + scan-to-scan ICP fused per frame.

Per frame: downsample, extrapolate an initial guess from the last two
optimized poses, register against the sparse reference map (absolute) and
the rolling submap (relative), robustly fuse the two, then feed the submap
and trim it around the current position.  Frames that barely moved are
declared static and skip optimization and submap insertion.

All public poses are georeferenced; internally everything runs shifted by
the reference map's origin offset for numerical conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geom import Pose, compose, extrapolate_pose, inverse, transform_points
from .posegraph import AbsoluteConstraint, RelativeConstraint, optimize_frame
from .refmap import ReferenceMap
from .registration import RegistrationParams, RegistrationResult, icp_align
from .voxel_map import VoxelMap, voxel_downsample


@dataclass
class PipelineConfig:
    downsample_voxel: float = 1.5
    map_voxel: float = 1.0
    max_points_per_voxel: int = 10
    min_point_distance: float = 0.1
    correspondence_dist: float = 6.0
    kernel_width: float = 1.0
    static_threshold: float = 0.1
    inlier_gate: float = 0.5
    submap_radius: float = 100.0
    submap_insert_voxel: float = 0.5
    scan_to_map_enabled: bool = True
    deterministic: bool = True

    def __post_init__(self):
        for name in (
            "downsample_voxel",
            "map_voxel",
            "max_points_per_voxel",
            "min_point_distance",
            "correspondence_dist",
            "kernel_width",
            "static_threshold",
            "submap_radius",
            "submap_insert_voxel",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.inlier_gate <= 1.0:
            raise ValueError("inlier_gate must be in (0, 1]")


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "on": True,
                "false": False, "0": False, "no": False, "off": False}


def parse_config(text: str) -> PipelineConfig:
    """Flat key = value config; keys must match PipelineConfig field names."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if types[key] in ("bool", bool):
            if value.lower() not in _BOOL_VALUES:
                raise ValueError(f"line {lineno}: {key} expects a boolean, got {value!r}")
            kwargs[key] = _BOOL_VALUES[value.lower()]
        elif types[key] in ("int", int):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return PipelineConfig(**kwargs)


def read_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


@dataclass
class FrameResult:
    frame_index: int
    pose: Pose  # georeferenced
    s2m_inlier_ratio: float
    s2m_used: bool
    static_frame: bool
    s2s_delta: Pose
    degraded: bool = False


class Pipeline:
    """Stateful mapping loop; one instance per sequence, frames in order."""

    def __init__(self, reference: Optional[ReferenceMap], config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        if reference is None and self.config.scan_to_map_enabled:
            raise ValueError("scan-to-map matching enabled but no reference map given")
        self.origin_offset = (
            reference.origin_offset.copy() if reference is not None else np.zeros(3)
        )
        self._params = RegistrationParams(
            max_correspondence_dist=self.config.correspondence_dist,
            kernel_width=self.config.kernel_width,
        )
        self.reference_map = self._new_voxel_map()
        if reference is not None and len(reference.points):
            self.reference_map.insert(reference.points)
        self.submap = self._new_voxel_map()
        self.pose_history: list[Pose] = []  # last two optimized poses, local frame
        self.frame_index = 0

    def _new_voxel_map(self) -> VoxelMap:
        return VoxelMap(
            voxel_size=self.config.map_voxel,
            max_points_per_voxel=self.config.max_points_per_voxel,
            min_point_distance=self.config.min_point_distance,
        )

    def _to_global(self, pose: Pose) -> Pose:
        return Pose(pose.t + self.origin_offset, pose.q)

    def _to_local(self, pose: Pose) -> Pose:
        return Pose(pose.t - self.origin_offset, pose.q)

    def initialize(self, cloud: np.ndarray, manual_pose: Pose) -> FrameResult:
        """Refine the manual first-frame pose on the map and seed the submap."""
        if self.frame_index != 0:
            raise RuntimeError("pipeline already initialized")
        down = voxel_downsample(cloud, self.config.downsample_voxel)
        x0 = self._to_local(manual_pose)
        ratio = 0.0
        if self.config.scan_to_map_enabled:
            reg = icp_align(down, self.reference_map, x0, self._params)
            if reg.failed:
                raise ValueError(
                    "first-frame registration found no usable correspondences; "
                    "the manual initial pose is too far from the map"
                )
            x0, ratio = reg.pose, reg.inlier_ratio
        # the submap is fed denser than the matching source so its bounded
        # buckets (10 per voxel at 0.1 m spacing) actually fill; matching a
        # sparse source against an equally sparse map is degenerate
        self.submap.insert(
            transform_points(x0, voxel_downsample(cloud, self.config.submap_insert_voxel))
        )
        self.pose_history = [x0]
        self.frame_index = 1
        return FrameResult(
            frame_index=0,
            pose=self._to_global(x0),
            s2m_inlier_ratio=ratio,
            s2m_used=ratio > self.config.inlier_gate,
            static_frame=False,
            s2s_delta=Pose.identity(),
        )

    def process_frame(self, cloud: np.ndarray) -> FrameResult:
        if self.frame_index == 0:
            raise RuntimeError("call initialize() with the first frame before process_frame()")
        cfg = self.config
        down = voxel_downsample(cloud, cfg.downsample_voxel)
        prev = self.pose_history[-1]
        prev2 = self.pose_history[-2] if len(self.pose_history) > 1 else prev
        x_init = extrapolate_pose(prev2, prev)

        s2m: Optional[RegistrationResult] = None
        if cfg.scan_to_map_enabled:
            s2m = icp_align(down, self.reference_map, x_init, self._params)
        s2m_ok = s2m is not None and not s2m.failed
        ratio = s2m.inlier_ratio if s2m is not None else 0.0

        s2s = icp_align(down, self.submap, x_init, self._params)
        s2s_ok = not s2s.failed
        delta = compose(inverse(prev), s2s.pose) if s2s_ok else Pose.identity()

        index = self.frame_index
        self.frame_index += 1

        if s2s_ok and float(np.linalg.norm(delta.t)) < cfg.static_threshold:
            # static frame: keep the previous pose, leave submap and history alone
            return FrameResult(
                frame_index=index,
                pose=self._to_global(prev),
                s2m_inlier_ratio=ratio,
                s2m_used=False,
                static_frame=True,
                s2s_delta=delta,
            )

        use_abs = s2m_ok and ratio > cfg.inlier_gate
        rel_c = RelativeConstraint(prev, delta) if s2s_ok else None
        abs_c = AbsoluteConstraint(s2m.pose) if use_abs else None
        degraded = rel_c is None and abs_c is None
        if degraded:
            pose_k = x_init  # motion-model fallback keeps the pipeline alive
        else:
            pose_k = optimize_frame(x_init, absolute=abs_c, relative=rel_c).pose

        self.submap.insert(
            transform_points(pose_k, voxel_downsample(cloud, cfg.submap_insert_voxel))
        )
        self.submap.trim(pose_k.t, cfg.submap_radius)
        self.pose_history = [prev, pose_k]
        return FrameResult(
            frame_index=index,
            pose=self._to_global(pose_k),
            s2m_inlier_ratio=ratio,
            s2m_used=abs_c is not None,
            static_frame=False,
            s2s_delta=delta,
            degraded=degraded,
        )


def run(
    reference: Optional[ReferenceMap],
    clouds: Sequence[np.ndarray],
    manual_pose: Pose,
    config: Optional[PipelineConfig] = None,
) -> tuple[list[FrameResult], np.ndarray]:
    """Process a whole sequence; returns per-frame results and the output map.

    The map is the union of the full-resolution input clouds placed at their
    optimized georeferenced poses (downsampling is only used for matching).
    """
    if len(clouds) == 0:
        raise ValueError("empty cloud sequence")
    pipeline = Pipeline(reference, config)
    results: list[FrameResult] = []
    parts: list[np.ndarray] = []
    for i, cloud in enumerate(clouds):
        if i == 0:
            result = pipeline.initialize(cloud, manual_pose)
        else:
            result = pipeline.process_frame(cloud)
        results.append(result)
        cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
        if len(cloud):
            parts.append(transform_points(result.pose, cloud))
    out_map = np.vstack(parts) if parts else np.zeros((0, 3))
    return results, out_map
