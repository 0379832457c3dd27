"""Synthetic-world generation, evaluation metrics and ablation sweeps.

The synthetic world is a closed room (an axis-aligned box seen from the
inside) with a smooth procedural colour field on its walls. Training frames
follow a smooth loop inside the room; test frames are offset from the
trajectory by controlled amounts so that they populate the pose-novelty
bins. Depth is obtained by exact ray-casting against the walls, so every
back-projected pixel lies on the room surface and ground truth is known
everywhere.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (CameraIntrinsics, DepthImage, PoseError, RigidPose,
                       pose_error, rotation_about_axis, rotation_angle_deg)
from .io_formats import FrameRecord
from .refinement import ScenePointModel
from .relocaliser import (Relocaliser, RelocalisationFailed, TIMING_STAGES)

SUCCESS_TRANSLATION = 0.05  # metres
SUCCESS_ANGLE = 5.0         # degrees


# ---------------------------------------------------------------------------
# synthetic world


@dataclass
class SyntheticWorldSpec:
    seed: int = 0
    extent: tuple = (4.0, 4.0, 3.0)   # room size in metres, centred at 0
    point_count: int = 50_000         # ground-truth surface samples
    train_frames: int = 200
    test_frames: int = 50
    width: int = 320
    height: int = 240
    focal: float = 280.0
    sphere_count: int = 14            # clutter; breaks wall-plane symmetry
    # Translation offsets of test poses from the trajectory, cycled per
    # frame; the >0.5 m entries land in the final novelty bin.
    test_offsets: tuple = (0.05, 0.15, 0.25, 0.35, 0.45, 0.60)
    test_max_rotation: float = 12.0   # degrees

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.focal, fy=self.focal,
                                cx=self.width / 2.0, cy=self.height / 2.0,
                                width=self.width, height=self.height)


@dataclass
class SyntheticScene:
    """Closed room with sphere clutter, all seen from the inside."""

    half_extent: np.ndarray
    sphere_centres: np.ndarray  # (k, 3)
    sphere_radii: np.ndarray    # (k,)


def colour_field(points: np.ndarray) -> np.ndarray:
    """Smooth deterministic RGB field over world space, in [0, 1]."""
    p = np.asarray(points, np.float64)
    freqs = np.array([[2.1, 3.3, 1.7], [3.9, 1.3, 2.7], [1.1, 2.9, 3.5]])
    phases = np.array([0.3, 1.9, 4.1])
    return 0.5 + 0.5 * np.sin(p @ freqs.T + phases)


def _look_at_rotation(forward: np.ndarray,
                      up=np.array([0.0, 0.0, 1.0])) -> np.ndarray:
    """Camera-to-world rotation for a camera looking along `forward`
    (camera x right, y down, z forward; world z up)."""
    f = forward / np.linalg.norm(forward)
    right = np.cross(f, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.cross(f, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(f, right)
    return np.stack([right, down, f], axis=1)


def _ray_cast_scene(pose: RigidPose, intr: CameraIntrinsics,
                    scene: SyntheticScene) -> DepthImage:
    """Exact depth along each pixel ray: nearest of walls and spheres."""
    ys, xs = np.mgrid[0:intr.height, 0:intr.width]
    dirs_cam = np.stack([(xs - intr.cx) / intr.fx,
                         (ys - intr.cy) / intr.fy,
                         np.ones_like(xs, np.float64)], axis=-1)
    dirs_w = dirs_cam @ pose.rotation.T
    o = pose.translation
    t_hit = np.full(dirs_w.shape[:2], np.inf)
    for a in range(3):
        d = dirs_w[..., a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pos = (scene.half_extent[a] - o[a]) / d
            t_neg = (-scene.half_extent[a] - o[a]) / d
        t_a = np.where(d > 0, t_pos, np.where(d < 0, t_neg, np.inf))
        t_hit = np.minimum(t_hit, t_a)
    for c, r in zip(scene.sphere_centres, scene.sphere_radii):
        # |o + t d - c|^2 = r^2, camera outside the sphere by construction.
        oc = o - c
        a2 = np.einsum("ijk,ijk->ij", dirs_w, dirs_w)
        b = np.einsum("ijk,k->ij", dirs_w, oc)
        disc = b * b - a2 * (oc @ oc - r * r)
        with np.errstate(invalid="ignore"):
            t_s = (-b - np.sqrt(disc)) / a2
        hit = (disc > 0) & (t_s > 0)
        t_hit = np.where(hit, np.minimum(t_hit, t_s), t_hit)
    # Camera depth equals t because dirs_cam has unit z.
    return DepthImage(np.where(np.isfinite(t_hit), t_hit, 0.0))


def render_synthetic_frame(index: int, pose: RigidPose,
                           intr: CameraIntrinsics,
                           scene: SyntheticScene) -> FrameRecord:
    depth = _ray_cast_scene(pose, intr, scene)
    ys, xs = np.mgrid[0:intr.height, 0:intr.width]
    cam = np.stack([(xs - intr.cx) / intr.fx * depth.values,
                    (ys - intr.cy) / intr.fy * depth.values,
                    depth.values], axis=-1)
    world = pose.apply(cam.reshape(-1, 3)).reshape(cam.shape)
    rgb = np.clip(colour_field(world) * 255.0, 0, 255).astype(np.uint8)
    return FrameRecord(index=index, rgb=rgb, depth=depth, pose=pose,
                       intrinsics=intr)


def _sample_scene_surface(n: int, scene: SyntheticScene,
                          rng: np.random.Generator) -> np.ndarray:
    """Uniform (area-weighted) samples on the walls and sphere surfaces."""
    hx, hy, hz = scene.half_extent
    areas = [hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]
    areas += [4.0 * math.pi * r * r for r in scene.sphere_radii]
    areas = np.asarray(areas)
    piece = rng.choice(len(areas), size=n, p=areas / areas.sum())
    p = rng.uniform(-1.0, 1.0, size=(n, 3)) * scene.half_extent
    on_wall = piece < 6
    axis = piece[on_wall] // 2
    sign = np.where(piece[on_wall] % 2 == 0, 1.0, -1.0)
    rows = np.nonzero(on_wall)[0]
    p[rows, axis] = sign * scene.half_extent[axis]
    for k, (c, r) in enumerate(zip(scene.sphere_centres,
                                   scene.sphere_radii)):
        rows = np.nonzero(piece == 6 + k)[0]
        if len(rows) == 0:
            continue
        d = rng.normal(size=(len(rows), 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        p[rows] = c + r * d
    return p


def make_scene(spec: SyntheticWorldSpec) -> SyntheticScene:
    """Walls plus sphere clutter placed clear of the camera region."""
    rng = np.random.default_rng([spec.seed, 7])
    half = np.asarray(spec.extent, np.float64) / 2.0
    centres, radii = [], []
    lo = 0.70 * min(half[0], half[1])
    hi = 0.80 * min(half[0], half[1])
    for _ in range(spec.sphere_count):
        phi = rng.uniform(0, 2 * math.pi)
        rho = rng.uniform(lo, hi)
        z = rng.uniform(-0.75, 0.75) * half[2]
        centres.append([rho * math.cos(phi), rho * math.sin(phi), z])
        radii.append(rng.uniform(0.12, 0.3))
    return SyntheticScene(
        half_extent=half,
        sphere_centres=np.array(centres).reshape(-1, 3),
        sphere_radii=np.array(radii))


def generate_synthetic_world(spec: SyntheticWorldSpec):
    """Build (ground-truth model, training frames, test frames)."""
    rng = np.random.default_rng(spec.seed)
    scene = make_scene(spec)
    half = scene.half_extent
    intr = spec.intrinsics()

    gt_model = ScenePointModel(voxel_size=1e-4)
    surface = _sample_scene_surface(spec.point_count, scene, rng)
    gt_model.add_points(surface, colour_field(surface))

    radius = 0.2 * min(half[0], half[1])
    train = []
    for i in range(spec.train_frames):
        theta = 2.0 * math.pi * i / max(spec.train_frames, 1)
        pos = np.array([radius * math.cos(theta), radius * math.sin(theta),
                        0.3 * math.sin(2 * theta)])
        pitch = 0.25 * math.sin(3 * theta)
        forward = np.array([math.cos(theta), math.sin(theta), pitch])
        pose = RigidPose(_look_at_rotation(forward), pos)
        train.append(render_synthetic_frame(i, pose, intr, scene))

    test = []
    margin = 0.85
    for j in range(spec.test_frames):
        base = train[rng.integers(len(train))].pose
        offset_mag = spec.test_offsets[j % len(spec.test_offsets)]
        for _ in range(100):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            pos = base.translation + offset_mag * direction
            if (np.abs(pos) < margin * half).all():
                break
        angle = rng.uniform(0.0, spec.test_max_rotation)
        axis = rng.normal(size=3)
        R = rotation_about_axis(axis, angle) @ base.rotation
        pose = RigidPose(R, pos)
        test.append(render_synthetic_frame(10_000 + j, pose, intr, scene))
    return gt_model, train, test


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class FrameResult:
    frame_index: int
    estimated: Optional[RigidPose]
    error: Optional[PoseError]
    success: bool
    timings: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    frames: list
    success_rate: float
    median_translation: float
    median_rotation: float
    mean_timings: dict

    def to_json_dict(self) -> dict:
        return {
            "success_rate_5cm5deg": self.success_rate,
            "median_translation_m": self.median_translation,
            "median_rotation_deg": self.median_rotation,
            "mean_timings_ms": self.mean_timings,
            "frames": [{
                "frame_index": f.frame_index,
                "pose": (None if f.estimated is None
                         else f.estimated.matrix().tolist()),
                "translation_error_m": (None if f.error is None
                                        else f.error.translation_error),
                "rotation_error_deg": (None if f.error is None
                                       else f.error.angular_error),
                "success": f.success,
                "timings_ms": f.timings,
            } for f in self.frames],
        }


def evaluate(reloc: Relocaliser, test_frames) -> EvalReport:
    """Relocalise every test frame and compare with its ground-truth pose.

    Failed frames count as failures; they are never dropped from the
    success rate. Medians are over successfully returned poses.
    """
    results = []
    for frame in test_frames:
        try:
            pose, timings = reloc.relocalise(frame)
        except RelocalisationFailed:
            results.append(FrameResult(frame.index, None, None, False))
            continue
        err = pose_error(pose, frame.pose)
        results.append(FrameResult(
            frame.index, pose, err,
            err.is_success(SUCCESS_TRANSLATION, SUCCESS_ANGLE), timings))
    n = len(results)
    success_rate = sum(r.success for r in results) / n if n else 0.0
    t_errs = [r.error.translation_error for r in results if r.error]
    r_errs = [r.error.angular_error for r in results if r.error]
    timing_keys = TIMING_STAGES + ("Total",)
    timed = [r.timings for r in results if r.timings]
    mean_timings = {k: (float(np.mean([t[k] for t in timed])) if timed
                        else 0.0) for k in timing_keys}
    return EvalReport(
        frames=results, success_rate=success_rate,
        median_translation=float(np.median(t_errs)) if t_errs else math.inf,
        median_rotation=float(np.median(r_errs)) if r_errs else math.inf,
        mean_timings=mean_timings)


# ---------------------------------------------------------------------------
# pose-novelty binning


@dataclass
class NoveltyBinning:
    edges_cm: list                  # closed upper edges; final bin is open
    edges_deg: list
    counts: list                    # len(edges) + 1
    success_rates: list             # NaN for empty bins

    def labels(self) -> list:
        out = []
        lo_cm, lo_deg = 0.0, 0.0
        for cm, deg in zip(self.edges_cm, self.edges_deg):
            out.append(f"<= {cm:g}cm / {deg:g}deg")
            lo_cm, lo_deg = cm, deg
        out.append(f"> {lo_cm:g}cm or {lo_deg:g}deg")
        return out


def novelty_bin_index(t_dist_m: float, r_dist_deg: float,
                      edges_cm, edges_deg) -> int:
    """Smallest bin whose translation AND rotation thresholds both hold;
    poses beyond the last thresholds fall into the final open bin."""
    for i, (cm, deg) in enumerate(zip(edges_cm, edges_deg)):
        if t_dist_m * 100.0 <= cm and r_dist_deg <= deg:
            return i
    return len(edges_cm)


def nearest_pose_distances(train_poses, test_pose: RigidPose):
    """Min translation distance and min rotation distance (independently)
    from a test pose to the training trajectory."""
    t = np.array([p.translation for p in train_poses])
    t_dist = float(np.linalg.norm(t - test_pose.translation, axis=1).min())
    r_dist = min(rotation_angle_deg(p.rotation @ test_pose.rotation.T)
                 for p in train_poses)
    return t_dist, r_dist


def novelty_binning(train_poses, test_poses, successes,
                    edges_cm=(10, 20, 30, 40, 50),
                    edges_deg=(10, 20, 30, 40, 50)) -> NoveltyBinning:
    edges_cm, edges_deg = list(edges_cm), list(edges_deg)
    nbins = len(edges_cm) + 1
    counts = [0] * nbins
    wins = [0] * nbins
    for pose, ok in zip(test_poses, successes):
        t_dist, r_dist = nearest_pose_distances(train_poses, pose)
        b = novelty_bin_index(t_dist, r_dist, edges_cm, edges_deg)
        counts[b] += 1
        wins[b] += bool(ok)
    rates = [wins[i] / counts[i] if counts[i] else math.nan
             for i in range(nbins)]
    return NoveltyBinning(edges_cm=edges_cm, edges_deg=edges_deg,
                          counts=counts, success_rates=rates)


# ---------------------------------------------------------------------------
# end-to-end runs and sweeps


@dataclass
class PipelineConfig:
    """Harness-level configuration for one train+evaluate run."""

    cell_size: float = 0.1
    cells_per_side: int = 128
    reservoir_count: int = 16384
    reservoir_capacity: int = 4096
    clusterer_sigma: float = 0.1
    clusterer_tau: float = 0.1
    max_cluster_count: int = 50
    min_cluster_size: int = 5
    noise_sigma: float = 0.05
    outlier_fraction: float = 0.3
    use_warp: bool = False
    seed: int = 0
    raw_predictions: bool = False
    pose_update: bool = True
    use_icp: bool = True
    use_ranking: bool = True


def standard_warp() -> tuple:
    """A fixed invertible affine warp: the 'trained on a different scene'
    stand-in. Rotation + mild anisotropic scale + offset."""
    R = rotation_about_axis([0.3, 1.0, 0.2], 35.0)
    A = R @ np.diag([1.1, 0.9, 1.05])
    # Offset kept small enough that the warped scene stays inside the
    # default grid coverage (cells_per_side * cell_size around the origin).
    b = np.array([2.0, -1.5, 1.0])
    return A, b


def make_relocaliser(cfg: PipelineConfig,
                     world_spec: SyntheticWorldSpec) -> Relocaliser:
    from .predictor import SyntheticPredictorConfig, predict_synthetic
    half = np.asarray(world_spec.extent) / 2.0
    if cfg.use_warp:
        A, b = standard_warp()
    else:
        A, b = np.eye(3), np.zeros(3)
    # Outliers land anywhere in the (warped) scene volume.
    corners = np.array([[sx * half[0], sy * half[1], sz * half[2]]
                        for sx in (-1, 1) for sy in (-1, 1)
                        for sz in (-1, 1)]) @ A.T + b
    pred_cfg = SyntheticPredictorConfig(
        warp_matrix=A, warp_offset=b, noise_sigma=cfg.noise_sigma,
        outlier_fraction=cfg.outlier_fraction,
        outlier_box_min=corners.min(axis=0),
        outlier_box_max=corners.max(axis=0), seed=cfg.seed)
    from .ransac import RansacParams
    ransac = RansacParams(pose_update=cfg.pose_update)
    return Relocaliser(
        predictor=lambda frame: predict_synthetic(frame, pred_cfg),
        cell_size=cfg.cell_size, cells_per_side=cfg.cells_per_side,
        reservoir_count=cfg.reservoir_count,
        reservoir_capacity=cfg.reservoir_capacity,
        clusterer_sigma=cfg.clusterer_sigma,
        clusterer_tau=cfg.clusterer_tau,
        max_cluster_count=cfg.max_cluster_count,
        min_cluster_size=cfg.min_cluster_size,
        ransac=ransac, raw_predictions=cfg.raw_predictions,
        use_icp=cfg.use_icp, use_ranking=cfg.use_ranking, seed=cfg.seed)


def run_pipeline(cfg: PipelineConfig, world=None,
                 world_spec: Optional[SyntheticWorldSpec] = None):
    """Train on the synthetic world and evaluate on its test frames.

    Returns (report, relocaliser). `world` may carry a pre-generated
    (gt_model, train, test) triple to avoid regenerating frames.
    """
    world_spec = world_spec or SyntheticWorldSpec()
    if world is None:
        world = generate_synthetic_world(world_spec)
    _, train, test = world
    reloc = make_relocaliser(cfg, world_spec)
    reloc.fit(train)
    return evaluate(reloc, test), reloc


def sweep_reservoir_count(world_spec: SyntheticWorldSpec,
                          counts, cfg: Optional[PipelineConfig] = None,
                          world=None):
    """Repeat train+evaluate for each reservoir count N.

    Returns rows of (N, occupied_cells, success_rate)."""
    cfg = cfg or PipelineConfig()
    if world is None:
        world = generate_synthetic_world(world_spec)
    rows = []
    for n in counts:
        from dataclasses import replace
        report, reloc = run_pipeline(replace(cfg, reservoir_count=int(n)),
                                     world=world, world_spec=world_spec)
        rows.append({"reservoir_count": int(n),
                     "occupied_cells": reloc.occupied_cell_count,
                     "success_rate": report.success_rate})
    return rows


def sweep_correspondence_quality(world_spec: SyntheticWorldSpec,
                                 good_fractions,
                                 cfg: Optional[PipelineConfig] = None,
                                 world=None, include_raw: bool = True):
    """Sweep the fraction of good correspondences for the adapted and raw
    pathways. Returns rows of (good_fraction, mode, success_rate)."""
    from dataclasses import replace
    cfg = cfg or PipelineConfig(use_warp=True)
    if world is None:
        world = generate_synthetic_world(world_spec)
    rows = []
    modes = [("adapted", False)] + ([("raw", True)] if include_raw else [])
    for good in good_fractions:
        for name, raw in modes:
            run_cfg = replace(cfg, outlier_fraction=1.0 - good,
                              raw_predictions=raw)
            report, _ = run_pipeline(run_cfg, world=world,
                                     world_spec=world_spec)
            rows.append({"good_fraction": good, "mode": name,
                         "success_rate": report.success_rate})
    return rows


def write_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2))
