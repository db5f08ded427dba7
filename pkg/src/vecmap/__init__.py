"""Vectorized map construction from fused bird's-eye-view grids.

Camera and lidar feature grids are fused (with an optional learned
alignment flow), decoded by coupled point/element queries, and read out
as classified polylines.  Everything runs on numpy; the handful of hot
kernels also carry numba-compiled twins selected by the VECMAP_KERNELS
environment variable (auto | numba | numpy).
"""
from .config import (
    CATEGORIES,
    ConfigError,
    RunConfig,
    default_config,
    load_config,
)
from .mapeval import EvalReport, chamfer_distance, evaluate
from .maptypes import MapElement, Prediction, VectorMap
from .model import MapModel, ModelOutputs
from .scenes import Scene, build_scene
from .tensor import Tape, Tensor
from .trainer import TrainingDiverged, train_model

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES",
    "ConfigError",
    "RunConfig",
    "default_config",
    "load_config",
    "EvalReport",
    "chamfer_distance",
    "evaluate",
    "MapElement",
    "Prediction",
    "VectorMap",
    "MapModel",
    "ModelOutputs",
    "Scene",
    "build_scene",
    "Tape",
    "Tensor",
    "TrainingDiverged",
    "train_model",
    "__version__",
]
