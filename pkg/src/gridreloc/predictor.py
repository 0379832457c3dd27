"""Per-frame grids of predicted 3D points at 1/8 image resolution.

Two sources are supported: replaying prediction files produced offline by a
trainer, and a synthetic oracle that warps ground-truth world points. The
oracle stands in for a learnt coordinate-regression network: an invertible
affine warp preserves locality, so points that are close in the target scene
stay close in the (simulated) pre-training scene, which is the only property
the downstream grid adaptation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, DepthImage, RigidPose
from .io_formats import FrameRecord, PredictionFile, load_predictions

SUBSAMPLING = 8


class MissingPrediction(Exception):
    pass


@dataclass
class PredictionGrid:
    """w/8 x h/8 field of predicted points with per-cell validity.

    Cell (x, y) corresponds to source pixel (8x, 8y).
    """

    points: np.ndarray  # (grid_h, grid_w, 3)
    valid: np.ndarray   # (grid_h, grid_w) bool

    @property
    def grid_width(self) -> int:
        return self.points.shape[1]

    @property
    def grid_height(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def source_pixel(x: int, y: int) -> tuple:
        return (SUBSAMPLING * x, SUBSAMPLING * y)


@dataclass
class SyntheticPredictorConfig:
    """Controls the warp + noise + outlier model of the synthetic oracle."""

    warp_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    warp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise_sigma: float = 0.0          # metres, isotropic Gaussian
    outlier_fraction: float = 0.0
    outlier_box_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    outlier_box_max: np.ndarray = field(default_factory=lambda: np.ones(3))
    seed: int = 0

    def __post_init__(self):
        self.warp_matrix = np.asarray(self.warp_matrix, dtype=np.float64)
        self.warp_offset = np.asarray(self.warp_offset, dtype=np.float64)
        self.outlier_box_min = np.asarray(self.outlier_box_min, np.float64)
        self.outlier_box_max = np.asarray(self.outlier_box_max, np.float64)
        if abs(np.linalg.det(self.warp_matrix)) <= 1e-6:
            raise ValueError("warp matrix must be invertible")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must be in [0, 1]")

    def warp(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.warp_matrix.T + self.warp_offset


def ground_truth_grid(depth: DepthImage, intrinsics: CameraIntrinsics,
                      pose: RigidPose) -> PredictionGrid:
    """Back-project the frame's own depth at grid pixels: the ideal oracle."""
    gw = depth.width // SUBSAMPLING
    gh = depth.height // SUBSAMPLING
    ys, xs = np.mgrid[0:gh, 0:gw]
    px, py = xs * SUBSAMPLING, ys * SUBSAMPLING
    d = depth.values[py, px]
    valid = d > 0
    cam = np.stack([(px - intrinsics.cx) / intrinsics.fx * d,
                    (py - intrinsics.cy) / intrinsics.fy * d,
                    d], axis=-1)
    world = pose.apply(cam.reshape(-1, 3)).reshape(gh, gw, 3)
    world[~valid] = 0.0
    return PredictionGrid(points=world, valid=valid)


def predict_synthetic(frame: FrameRecord,
                      config: SyntheticPredictorConfig) -> PredictionGrid:
    """Simulate a coordinate-regression network's output for one frame.

    Each valid grid cell gets warp(gt) + Gaussian noise with probability
    1 - outlier_fraction, otherwise a uniform sample from the outlier box.
    The RNG stream is derived from (seed, frame index), so results do not
    depend on the order in which frames are processed.
    """
    if frame.pose is None:
        raise ValueError("synthetic prediction needs the frame's pose")
    gt = ground_truth_grid(frame.depth, frame.intrinsics, frame.pose)
    rng = np.random.default_rng([config.seed, frame.index])
    gh, gw = gt.points.shape[:2]
    pred = config.warp(gt.points.reshape(-1, 3)).reshape(gh, gw, 3)
    if config.noise_sigma > 0:
        pred = pred + rng.normal(0.0, config.noise_sigma, size=pred.shape)
    if config.outlier_fraction > 0:
        is_outlier = rng.random((gh, gw)) < config.outlier_fraction
        box = rng.uniform(config.outlier_box_min, config.outlier_box_max,
                          size=(gh, gw, 3))
        pred = np.where(is_outlier[..., None], box, pred)
    pred[~gt.valid] = 0.0
    return PredictionGrid(points=pred, valid=gt.valid.copy())


class PredictionStore:
    """Directory of prediction files, one per frame index."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, frame_index: int) -> Path:
        return self.directory / f"predictions-{frame_index:06d}.bin"

    def save(self, p: PredictionFile) -> None:
        from .io_formats import save_predictions
        self.directory.mkdir(parents=True, exist_ok=True)
        save_predictions(p, self.path_for(p.frame_index))

    def load(self, frame_index: int) -> PredictionFile:
        path = self.path_for(frame_index)
        if not path.exists():
            raise MissingPrediction(f"no prediction file for frame "
                                    f"{frame_index} in {self.directory}")
        return load_predictions(path)


def predict_from_file(frame_index: int,
                      store: PredictionStore) -> PredictionGrid:
    """Replay a stored prediction grid for the given frame."""
    p = store.load(frame_index)
    return PredictionGrid(points=p.points.astype(np.float64),
                          valid=p.valid.copy())
