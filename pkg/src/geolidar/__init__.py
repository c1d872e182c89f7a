"""Georeferenced LiDAR point-cloud mapping without GNSS.

Fuses scan-to-scan ICP against a rolling local submap with scan-to-map ICP
against a sparse prior built from building footprints and surface-model
grids, one robust pose-graph optimization per frame.
"""

from .geom import Pose, Twist, compose, extrapolate_pose, inverse, se3_exp, se3_log, slerp
from .pipeline import FrameResult, Pipeline, PipelineConfig, run
from .refmap import (
    BuildingFootprint,
    ElevationGrid,
    FootprintSet,
    ReferenceMap,
    build_reference_map,
)
from .registration import RegistrationParams, RegistrationResult, icp_align
from .voxel_map import VoxelMap, voxel_downsample

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "Twist",
    "compose",
    "inverse",
    "se3_exp",
    "se3_log",
    "slerp",
    "extrapolate_pose",
    "VoxelMap",
    "voxel_downsample",
    "RegistrationParams",
    "RegistrationResult",
    "icp_align",
    "BuildingFootprint",
    "ElevationGrid",
    "FootprintSet",
    "ReferenceMap",
    "build_reference_map",
    "Pipeline",
    "PipelineConfig",
    "FrameResult",
    "run",
    "__version__",
]
