"""The end-to-end online relocaliser, packaged as a fit/predict estimator.

`fit` consumes an RGB-D sequence with known poses (online training): every
frame's predictions are routed through the grid lookup into reservoirs,
which are filled with back-projected world points and clustered; a coloured
scene point model is accumulated on the side. `predict` estimates the
camera-to-world pose of a new frame via hypothesis generation, preemptive
RANSAC with LM refinement, and ICP + depth-render ranking.
"""

from __future__ import annotations

import time
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import RigidPose
from .grid import GridConfig, ReservoirLookupTable, adapt
from .io_formats import FrameRecord
from .predictor import SUBSAMPLING, PredictionGrid
from .ransac import (CorrespondenceSet, NoHypotheses, RansacParams,
                     build_correspondences, generate_hypotheses,
                     preemptive_ransac, score_and_cull, score_hypotheses)
from .refinement import (AllFailed, EmptyOverlap, RankedResult,
                         ScenePointModel, rank_hypotheses)
from .reservoirs import ClustererParams, Reservoir

TIMING_STAGES = ("Hypothesis Generation", "Hypothesis Pruning",
                 "Inlier Sampling and Energy Computation", "Optimisation",
                 "Hypothesis Ranking")


class RelocalisationFailed(Exception):
    pass


class NotTrained(RelocalisationFailed):
    pass


class Relocaliser(BaseEstimator):
    """Online-trainable RGB-D camera relocaliser.

    Parameters follow the published hyperparameter names where one exists
    (cellSize, reservoirCount, clustererSigma, ...), snake-cased.

    `predictor` maps a FrameRecord to a PredictionGrid; it abstracts over
    replayed network predictions and the synthetic oracle.
    """

    def __init__(self,
                 predictor: Optional[Callable[[FrameRecord],
                                              PredictionGrid]] = None,
                 cell_size: float = 0.1,
                 cells_per_side: int = 128,
                 reservoir_count: int = 16384,
                 reservoir_capacity: int = 4096,
                 clusterer_sigma: float = 0.1,
                 clusterer_tau: float = 0.05,
                 max_cluster_count: int = 50,
                 min_cluster_size: int = 20,
                 recluster_interval: int = 128,
                 ransac: Optional[RansacParams] = None,
                 model_voxel_size: float = 0.01,
                 model_frame_interval: int = 10,
                 model_pixel_stride: int = 1,
                 use_icp: bool = True,
                 use_ranking: bool = True,
                 raw_predictions: bool = False,
                 raw_mode_sigma: float = 0.05,
                 seed: int = 0):
        self.predictor = predictor
        self.cell_size = cell_size
        self.cells_per_side = cells_per_side
        self.reservoir_count = reservoir_count
        self.reservoir_capacity = reservoir_capacity
        self.clusterer_sigma = clusterer_sigma
        self.clusterer_tau = clusterer_tau
        self.max_cluster_count = max_cluster_count
        self.min_cluster_size = min_cluster_size
        self.recluster_interval = recluster_interval
        self.ransac = ransac
        self.model_voxel_size = model_voxel_size
        self.model_frame_interval = model_frame_interval
        self.model_pixel_stride = model_pixel_stride
        self.use_icp = use_icp
        self.use_ranking = use_ranking
        self.raw_predictions = raw_predictions
        self.raw_mode_sigma = raw_mode_sigma
        self.seed = seed

    # -- online training ----------------------------------------------------

    def fit(self, frames, y=None) -> "Relocaliser":
        """Run online training over an ordered RGB-D sequence with poses."""
        self.grid_config_ = GridConfig(self.cell_size, self.cells_per_side)
        self.table_ = ReservoirLookupTable(self.reservoir_count,
                                           seed=self.seed)
        self.reservoirs_ = [Reservoir(capacity=self.reservoir_capacity)
                            for _ in range(self.reservoir_count)]
        self.clusterer_ = ClustererParams(
            sigma=self.clusterer_sigma, tau=self.clusterer_tau,
            max_cluster_count=self.max_cluster_count,
            min_cluster_size=self.min_cluster_size)
        self.model_ = ScenePointModel(voxel_size=self.model_voxel_size)
        rng = np.random.default_rng([self.seed, 1])
        for i, frame in enumerate(frames):
            if frame.pose is None:
                raise ValueError(f"training frame {frame.index} has no pose")
            if not self.raw_predictions:
                self._train_frame(frame, rng)
            if i % self.model_frame_interval == 0:
                self._extend_model(frame)
        for r in self.reservoirs_:
            if len(r) and r.inserts_since_recluster:
                r.recluster(self.clusterer_)
        return self

    def _train_frame(self, frame: FrameRecord,
                     rng: np.random.Generator) -> None:
        pred = self.predictor(frame)
        index_image = adapt(pred, self.table_, self.grid_config_)
        world, colours, reservoir_idx = _grid_pixel_points(frame, index_image)
        if len(world) == 0:
            return
        order = np.argsort(reservoir_idx, kind="stable")
        world, colours = world[order], colours[order]
        reservoir_idx = reservoir_idx[order]
        bounds = np.searchsorted(reservoir_idx,
                                 np.unique(reservoir_idx))
        bounds = np.append(bounds, len(reservoir_idx))
        for s, e in zip(bounds[:-1], bounds[1:]):
            r = self.reservoirs_[reservoir_idx[s]]
            r.add_points(world[s:e], colours[s:e], rng)
            if r.inserts_since_recluster >= self.recluster_interval:
                r.recluster(self.clusterer_)

    def _extend_model(self, frame: FrameRecord) -> None:
        from .geometry import back_project_image
        points, pix = back_project_image(frame.depth, frame.intrinsics,
                                         frame.pose,
                                         stride=self.model_pixel_stride)
        colours = frame.rgb[pix[:, 1], pix[:, 0]] / 255.0
        self.model_.add_points(points, colours)

    # -- relocalisation -----------------------------------------------------

    def predict(self, frame: FrameRecord) -> RigidPose:
        pose, _ = self.relocalise(frame)
        return pose

    def relocalise(self, frame: FrameRecord):
        """Estimate the camera-to-world pose of one frame.

        Returns (pose, timings) where timings maps each pipeline stage of
        the timing breakdown to milliseconds. Raises RelocalisationFailed
        when no pose can be produced.
        """
        if not hasattr(self, "table_") and not self.raw_predictions:
            raise NotTrained("fit must run before relocalise")
        if not hasattr(self, "model_"):
            raise NotTrained("fit must run before relocalise")
        params = self.ransac or RansacParams()
        rng = np.random.default_rng([self.seed, 2, frame.index])
        timings = {}
        t0 = time.perf_counter()
        cs = self._correspondences(frame)
        try:
            hs = generate_hypotheses(cs, params, rng)
        except NoHypotheses as e:
            raise RelocalisationFailed(f"hypothesis generation failed: {e}")
        timings["Hypothesis Generation"] = _ms(t0)

        t0 = time.perf_counter()
        hs = score_and_cull(hs, cs, params, rng)
        timings["Hypothesis Pruning"] = _ms(t0)

        stage_clock = {"sampling": 0.0, "optimisation": 0.0}
        hs = preemptive_ransac(hs, cs, params, rng, stage_clock=stage_clock)
        timings["Inlier Sampling and Energy Computation"] = \
            stage_clock["sampling"] * 1000.0
        timings["Optimisation"] = stage_clock["optimisation"] * 1000.0

        t0 = time.perf_counter()
        candidates = [hs.pose(i) for i in range(len(hs))]
        if self.use_ranking or self.use_icp:
            try:
                result = rank_hypotheses(candidates, frame.depth,
                                         frame.intrinsics, self.model_,
                                         use_icp=self.use_icp)
                pose = result.pose
            except (AllFailed, EmptyOverlap) as e:
                raise RelocalisationFailed(f"ranking failed: {e}")
        else:
            best = int(np.argmin(hs.energies))
            pose = hs.pose(best)
        timings["Hypothesis Ranking"] = _ms(t0)
        timings["Total"] = sum(timings[s] for s in TIMING_STAGES)
        return pose, timings

    def _correspondences(self, frame: FrameRecord) -> CorrespondenceSet:
        pred = self.predictor(frame)
        if self.raw_predictions:
            return _raw_correspondences(frame, pred, self.raw_mode_sigma)
        index_image = adapt(pred, self.table_, self.grid_config_)
        return build_correspondences(index_image, frame.depth,
                                     frame.intrinsics, self.reservoirs_,
                                     rgb=frame.rgb)

    @property
    def occupied_cell_count(self) -> int:
        return self.table_.occupied_cell_count


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def _grid_pixel_points(frame: FrameRecord, index_image):
    """World points, colours and reservoir ids at grid pixels with both a
    reservoir index and valid depth (the reservoir-filling inputs)."""
    idx = index_image.indices
    gh, gw = idx.shape
    ys, xs = np.mgrid[0:gh, 0:gw]
    px, py = xs * SUBSAMPLING, ys * SUBSAMPLING
    d = frame.depth.values[py, px]
    mask = (idx >= 0) & (d > 0)
    px, py, d = px[mask], py[mask], d[mask]
    intr = frame.intrinsics
    cam = np.stack([(px - intr.cx) / intr.fx * d,
                    (py - intr.cy) / intr.fy * d, d], axis=1)
    world = frame.pose.apply(cam)
    colours = frame.rgb[py, px] / 255.0
    return world, colours, idx[mask]


def _raw_correspondences(frame: FrameRecord, pred: PredictionGrid,
                         sigma: float) -> CorrespondenceSet:
    """Bypass adaptation: each predicted point is its pixel's single world
    candidate, with an isotropic covariance for LM weighting."""
    gh, gw = pred.points.shape[:2]
    ys, xs = np.mgrid[0:gh, 0:gw]
    px, py = xs * SUBSAMPLING, ys * SUBSAMPLING
    d = frame.depth.values[py, px]
    mask = pred.valid & (d > 0)
    px, py, d = px[mask], py[mask], d[mask]
    intr = frame.intrinsics
    cam = np.stack([(px - intr.cx) / intr.fx * d,
                    (py - intr.cy) / intr.fy * d, d], axis=1)
    n = len(cam)
    colours = frame.rgb[py, px] / 255.0
    inv_cov = np.repeat(np.eye(3)[None] / sigma ** 2, n, axis=0)
    return CorrespondenceSet(
        pixels=np.stack([px, py], axis=1).astype(np.float64),
        cam_points=cam, colours=colours,
        mode_centroids=pred.points[mask],
        mode_colours=colours,  # raw modes carry their pixel's colour
        mode_inv_covs=inv_cov,
        offsets=np.arange(n + 1, dtype=np.int64))
