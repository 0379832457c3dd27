"""ICP refinement against the scene model and depth-render ranking.

The final stage of relocalisation: each of the 16 candidate poses is
refined with point-to-point ICP against a coloured point model of the
scene, then synthetic depth images rendered from the refined poses are
compared with the live depth image and the best-matching pose wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (CameraIntrinsics, DepthImage, RigidPose,
                       back_project_image)
from .ransac import kabsch, DegenerateConfiguration


class EmptyOverlap(Exception):
    pass


class AllFailed(Exception):
    pass


class ScenePointModel:
    """Coloured world-space point cloud with voxel dedup and a KD-tree.

    Points are deduplicated on insertion to one per voxel (first point
    wins), keeping the model bounded during online training.
    """

    def __init__(self, voxel_size: float = 0.01):
        self.voxel_size = voxel_size
        self._pending: list = []
        self._positions = np.empty((0, 3), np.float64)
        self._colours = np.empty((0, 3), np.float64)
        self._tree: Optional[cKDTree] = None

    def __len__(self) -> int:
        self._compact()
        return len(self._positions)

    def add_points(self, positions: np.ndarray, colours: np.ndarray) -> None:
        positions = np.asarray(positions, np.float64).reshape(-1, 3)
        colours = np.asarray(colours, np.float64).reshape(-1, 3)
        if len(positions) == 0:
            return
        self._pending.append((positions, colours))
        self._tree = None

    def _compact(self) -> None:
        """Voxel-deduplicate all points seen so far; earliest point wins."""
        if not self._pending:
            return
        positions = np.vstack([self._positions]
                              + [p for p, _ in self._pending])
        colours = np.vstack([self._colours] + [c for _, c in self._pending])
        self._pending.clear()
        keys = np.floor(positions / self.voxel_size).astype(np.int64)
        # Single scalar key per voxel keeps np.unique fast.
        packed = ((keys[:, 0] + (1 << 20)) * (1 << 42)
                  + (keys[:, 1] + (1 << 20)) * (1 << 21)
                  + (keys[:, 2] + (1 << 20)))
        _, first = np.unique(packed, return_index=True)
        first.sort()
        self._positions = positions[first]
        self._colours = colours[first]

    @property
    def positions(self) -> np.ndarray:
        self._compact()
        return self._positions

    @property
    def colours(self) -> np.ndarray:
        self._compact()
        return self._colours

    def tree(self) -> cKDTree:
        if self._tree is None:
            if len(self) == 0:
                raise EmptyOverlap("scene model is empty")
            self._tree = cKDTree(self.positions)
        return self._tree

    def save(self, path) -> None:
        from .io_formats import save_scene_model_arrays
        save_scene_model_arrays(self.positions, self.colours, path)

    @classmethod
    def load(cls, path, voxel_size: float = 0.01) -> "ScenePointModel":
        from .io_formats import load_scene_model_arrays
        positions, colours = load_scene_model_arrays(path)
        model = cls(voxel_size=voxel_size)
        model.add_points(positions, colours)
        return model


def icp_refine(initial: RigidPose, live_depth: DepthImage,
               intrinsics: CameraIntrinsics, model: ScenePointModel,
               max_iterations: int = 30, reject_distance: float = 0.1,
               min_reject_distance: float = 0.02,
               relative_tolerance: float = 1e-4,
               convergence_residual: float = 0.02,
               stride: int = 6):
    """Point-to-point ICP of the back-projected live depth onto the model.

    The correspondence rejection threshold shrinks towards a multiple of
    the current residual as the alignment improves, which sharpens the
    final pose without normals. Returns (refined pose, converged flag);
    the flag reports whether the final mean correspondence residual fell
    below `convergence_residual`.
    """
    if len(model) == 0:
        raise EmptyOverlap("scene model is empty")
    cam_points, _ = back_project_image(live_depth, intrinsics,
                                       RigidPose.identity(), stride=stride)
    if len(cam_points) < 3:
        raise EmptyOverlap("no valid depth to align")
    tree = model.tree()
    pose = initial
    reject = reject_distance
    prev_residual = np.inf
    for _ in range(max_iterations):
        world = pose.apply(cam_points)
        dist, nn = tree.query(world, workers=-1)
        keep = dist <= reject
        if keep.sum() < 3:
            if pose is initial:
                raise EmptyOverlap("no correspondences at initial pose")
            break
        residual = float(dist[keep].mean())
        try:
            pose = kabsch(cam_points[keep], model.positions[nn[keep]])
        except DegenerateConfiguration:
            break
        reject = max(min_reject_distance, min(reject, 3.0 * residual))
        if prev_residual - residual < relative_tolerance * max(prev_residual,
                                                               1e-12):
            prev_residual = min(prev_residual, residual)
            break
        prev_residual = residual
    return pose, prev_residual < convergence_residual


def render_depth(model: ScenePointModel, pose: RigidPose,
                 intrinsics: CameraIntrinsics) -> DepthImage:
    """Z-buffer point-splat render of the model from the given camera pose.

    Each point covers one pixel; the nearest depth per pixel wins and
    uncovered pixels stay invalid.
    """
    w, h = intrinsics.width, intrinsics.height
    depth = np.zeros((h, w))
    if len(model) == 0:
        return DepthImage(depth)
    cam = model.positions @ pose.rotation + \
        (-pose.rotation.T @ pose.translation)
    z = cam[:, 2]
    front = z > 1e-9
    cam, z = cam[front], z[front]
    u = np.round(intrinsics.fx * cam[:, 0] / z + intrinsics.cx).astype(int)
    v = np.round(intrinsics.fy * cam[:, 1] / z + intrinsics.cy).astype(int)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v, z = u[inside], v[inside], z[inside]
    if len(z) == 0:
        return DepthImage(depth)
    flat = v * w + u
    order = np.lexsort((z, flat))
    flat, z = flat[order], z[order]
    first = np.ones(len(flat), bool)
    first[1:] = flat[1:] != flat[:-1]
    depth.reshape(-1)[flat[first]] = z[first]
    return DepthImage(depth)


def _scaled_intrinsics(intr: CameraIntrinsics, scale: float):
    w = max(1, int(round(intr.width * scale)))
    h = max(1, int(round(intr.height * scale)))
    sx, sy = w / intr.width, h / intr.height
    return CameraIntrinsics(fx=intr.fx * sx, fy=intr.fy * sy,
                            cx=intr.cx * sx, cy=intr.cy * sy,
                            width=w, height=h), sx, sy


def depth_difference_score(rendered: DepthImage, live: DepthImage,
                           truncation: float = 0.2) -> float:
    """Truncated-L1 mean difference over pixels valid in both images."""
    both = rendered.valid_mask & live.valid_mask
    if not both.any():
        return float("inf")
    diff = np.abs(rendered.values[both] - live.values[both])
    return float(np.minimum(diff, truncation).mean())


@dataclass
class RankedResult:
    pose: RigidPose
    depth_score: float
    icp_converged: bool


def rank_hypotheses(candidates, live_depth: DepthImage,
                    intrinsics: CameraIntrinsics, model: ScenePointModel,
                    use_icp: bool = True, render_scale: float = 0.25,
                    truncation: float = 0.2) -> RankedResult:
    """ICP-refine each candidate pose and rank by rendered-depth agreement.

    Rendering and comparison happen at a reduced resolution, which is both
    faster and more tolerant of holes in the point-splat render. Ties are
    broken by earlier candidate index.
    """
    if not candidates:
        raise AllFailed("no candidate poses")
    small_intr, _, _ = _scaled_intrinsics(intrinsics, render_scale)
    step = max(1, int(round(1.0 / render_scale)))
    live_small = DepthImage(live_depth.values[::step, ::step]
                            [:small_intr.height, :small_intr.width])
    # A thinned model copy is plenty for low-resolution splat renders.
    render_model = model
    max_render_points = 150_000
    if len(model) > max_render_points:
        every = int(np.ceil(len(model) / max_render_points))
        render_model = ScenePointModel(voxel_size=model.voxel_size)
        render_model.add_points(model.positions[::every],
                                model.colours[::every])
    best: Optional[RankedResult] = None
    any_ok = False
    seen: dict = {}
    for pose in candidates:
        converged = False
        if use_icp:
            key = (pose.rotation.tobytes(), pose.translation.tobytes())
            if key in seen:
                pose, converged = seen[key]
            else:
                try:
                    refined = icp_refine(pose, live_depth, intrinsics, model)
                except EmptyOverlap:
                    continue
                seen[key] = refined
                pose, converged = refined
        any_ok = True
        rendered = render_depth(render_model, pose, small_intr)
        score = depth_difference_score(rendered, live_small, truncation)
        if best is None or score < best.depth_score:
            best = RankedResult(pose=pose, depth_score=score,
                                icp_converged=converged)
    if not any_ok or best is None:
        raise AllFailed("every candidate failed ICP overlap")
    return best
