"""Online RGB-D camera relocalisation from scene-coordinate predictions.

The engine adapts a (possibly wrong-scene) scene-coordinate predictor to
the current scene on the fly: predictions are binned into a fixed world
grid, each occupied cell feeds a shared reservoir of observed points,
and clustered reservoir modes supply the 2D-to-3D correspondences for a
preemptive-RANSAC pose solver with optional ICP refinement and
depth-render hypothesis ranking.
"""

from .config import ConfigError, EngineConfig, load_config, save_config
from .geometry import (CameraIntrinsics, DepthImage, PoseError, RigidPose,
                       pose_error)
from .grid import GridConfig, ReservoirLookupTable, cell_index
from .harness import (EvalReport, PipelineConfig, SyntheticWorldSpec,
                      evaluate, generate_synthetic_world, run_pipeline)
from .io_formats import (FormatError, FrameRecord, MissingPose,
                         PredictionFile, load_sequence)
from .predictor import (PredictionGrid, SyntheticPredictorConfig,
                        predict_synthetic)
from .ransac import RansacParams, kabsch, preemptive_ransac
from .refinement import ScenePointModel, icp_refine, render_depth
from .relocaliser import (TIMING_STAGES, NotTrained, RelocalisationFailed,
                          Relocaliser)
from .reservoirs import ClustererParams, Reservoir

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ClustererParams",
    "ConfigError",
    "DepthImage",
    "EngineConfig",
    "EvalReport",
    "FormatError",
    "FrameRecord",
    "GridConfig",
    "MissingPose",
    "NotTrained",
    "PipelineConfig",
    "PoseError",
    "PredictionFile",
    "PredictionGrid",
    "RansacParams",
    "RelocalisationFailed",
    "Relocaliser",
    "Reservoir",
    "ReservoirLookupTable",
    "RigidPose",
    "ScenePointModel",
    "SyntheticPredictorConfig",
    "SyntheticWorldSpec",
    "TIMING_STAGES",
    "cell_index",
    "evaluate",
    "generate_synthetic_world",
    "icp_refine",
    "kabsch",
    "load_config",
    "load_sequence",
    "pose_error",
    "predict_synthetic",
    "preemptive_ransac",
    "render_depth",
    "run_pipeline",
    "save_config",
    "__version__",
]
