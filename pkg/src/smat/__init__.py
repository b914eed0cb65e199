"""Simultaneous static mapping and moving-object tracking for LiDAR streams."""

from .backend import BackEnd, BackEndParams, OccupancySubmap, StaticScanBuffer
from .frontend import FrontEnd, FrontEndParams
from .geometry import (
    BoundingBox,
    ConfigError,
    LabeledScan,
    PoseSE3,
    RangeImageConfig,
    ValidationError,
    VoxelMap,
)
from .metrics import MapScore, TrackRecord, evaluate_tracking, score_map
from .pipeline import MODES, PipelineConfig, RunReport, run_sequence
from .simworld import SceneConfig, generate_scene, ground_truth_maps, simulate_sequence

__version__ = "0.1.0"

__all__ = [
    "BackEnd",
    "BackEndParams",
    "BoundingBox",
    "ConfigError",
    "FrontEnd",
    "FrontEndParams",
    "LabeledScan",
    "MapScore",
    "MODES",
    "OccupancySubmap",
    "PipelineConfig",
    "PoseSE3",
    "RangeImageConfig",
    "RunReport",
    "SceneConfig",
    "StaticScanBuffer",
    "TrackRecord",
    "ValidationError",
    "VoxelMap",
    "evaluate_tracking",
    "generate_scene",
    "ground_truth_maps",
    "run_sequence",
    "score_map",
    "simulate_sequence",
]
