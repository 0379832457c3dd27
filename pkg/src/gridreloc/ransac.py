"""Camera pose estimation: Kabsch hypotheses, preemptive RANSAC, LM.

The pipeline generates up to N_max pose hypotheses from random 3-point
correspondences (each pixel's back-projection paired with a randomly chosen
cluster mode), filters them through geometric/colour checks, scores and
culls them, then runs a preemptive halving competition with optional
Levenberg-Marquardt refinement down to a final slate of 16 candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import CameraIntrinsics, DepthImage, RigidPose
from .grid import ReservoirIndexImage
from .predictor import SUBSAMPLING


class DegenerateConfiguration(Exception):
    pass


class NoHypotheses(Exception):
    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class RansacParams:
    """Backend tuning knobs, named after the published hyperparameters."""

    max_pose_candidates: int = 1024                        # N_max
    max_after_cull: int = 64                               # N_cull
    inliers_per_iteration: int = 512                       # eta
    max_candidate_generation_iterations: int = 6000
    min_squared_distance_between_sampled_modes: float = 0.09  # m^2
    max_translation_error: float = 0.05                    # m
    pose_update: bool = True                               # LM during RANSAC
    use_prediction_covariance: bool = True                 # LM weighting
    final_count: int = 16
    distance_consistency_tolerance: float = 0.05           # m, check (a)
    colour_tolerance: float = 0.3                          # per channel, (c)

    def __post_init__(self):
        if not (1 <= self.final_count <= self.max_after_cull
                <= self.max_pose_candidates):
            raise ValueError("need final_count <= N_cull <= N_max")
        if self.inliers_per_iteration < 1:
            raise ValueError("inliers_per_iteration must be >= 1")


@dataclass
class PoseHypothesis:
    pose: RigidPose
    energy: float = 0.0
    inliers: list = field(default_factory=list)  # (camera_point, world_mode)


@dataclass
class Correspondence:
    """Spec-level view of one pixel's candidate matches."""

    pixel: np.ndarray        # (2,)
    camera_point: np.ndarray  # (3,), z > 0
    modes: list              # candidate ClusterSummary objects
    colour: Optional[np.ndarray] = None


class CorrespondenceSet:
    """Column-oriented store of correspondences for vectorised scoring.

    Mode lists are ragged; they are stored flattened with per-pixel segment
    offsets, plus a padded (n, max_modes, 3) centroid array used when
    computing hypothesis energies.
    """

    def __init__(self, pixels, cam_points, colours, mode_centroids,
                 mode_colours, mode_inv_covs, offsets):
        self.pixels = np.asarray(pixels, np.float64).reshape(-1, 2)
        self.cam_points = np.asarray(cam_points, np.float64).reshape(-1, 3)
        self.colours = (None if colours is None
                        else np.asarray(colours, np.float64).reshape(-1, 3))
        self.mode_centroids = np.asarray(mode_centroids,
                                         np.float64).reshape(-1, 3)
        self.mode_colours = np.asarray(mode_colours,
                                       np.float64).reshape(-1, 3)
        self.mode_inv_covs = np.asarray(mode_inv_covs,
                                        np.float64).reshape(-1, 3, 3)
        self.offsets = np.asarray(offsets, np.int64)
        counts = np.diff(self.offsets)
        n, max_m = len(self.cam_points), int(counts.max(initial=0))
        self.padded_centroids = np.full((n, max_m, 3), np.inf)
        self.pad_mask = np.zeros((n, max_m), bool)
        for i in range(n):
            c = counts[i]
            self.padded_centroids[i, :c] = \
                self.mode_centroids[self.offsets[i]:self.offsets[i + 1]]
            self.pad_mask[i, :c] = True

    def __len__(self) -> int:
        return len(self.cam_points)

    def mode_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(
            pixel=self.pixels[i], camera_point=self.cam_points[i],
            modes=list(range(*self.mode_slice(i).indices(
                len(self.mode_centroids)))),
            colour=None if self.colours is None else self.colours[i])


def build_correspondences(index_image: ReservoirIndexImage,
                          depth: DepthImage, intrinsics: CameraIntrinsics,
                          reservoirs, rgb: Optional[np.ndarray] = None,
                          ) -> CorrespondenceSet:
    """One correspondence per grid pixel with a reservoir, valid depth and
    at least one cluster mode. `reservoirs` is indexable by reservoir id."""
    gh, gw = index_image.indices.shape
    pixels, cam_points, colours = [], [], []
    centroids, mcolours, inv_covs, offsets = [], [], [], [0]
    for y in range(gh):
        for x in range(gw):
            r = index_image.indices[y, x]
            if r < 0:
                continue
            px, py = SUBSAMPLING * x, SUBSAMPLING * y
            if px >= depth.width or py >= depth.height:
                continue
            d = depth.values[py, px]
            if d <= 0:
                continue
            modes = reservoirs[r].modes()
            if not modes:
                continue
            pixels.append((px, py))
            cam_points.append(((px - intrinsics.cx) / intrinsics.fx * d,
                               (py - intrinsics.cy) / intrinsics.fy * d, d))
            if rgb is not None:
                colours.append(rgb[py, px] / 255.0)
            for m in modes:
                centroids.append(m.centroid)
                mcolours.append(m.colour_centroid)
                inv_covs.append(m.inv_covariance)
            offsets.append(len(centroids))
    return CorrespondenceSet(
        pixels=np.array(pixels, np.float64).reshape(-1, 2),
        cam_points=np.array(cam_points, np.float64).reshape(-1, 3),
        colours=np.array(colours, np.float64) if rgb is not None else None,
        mode_centroids=np.array(centroids, np.float64).reshape(-1, 3),
        mode_colours=np.array(mcolours, np.float64).reshape(-1, 3),
        mode_inv_covs=(np.array(inv_covs, np.float64).reshape(-1, 3, 3)),
        offsets=np.array(offsets, np.int64))


# ---------------------------------------------------------------------------
# Kabsch


def kabsch(cam_points: np.ndarray, world_points: np.ndarray) -> RigidPose:
    """Least-squares rigid camera-to-world transform via SVD."""
    src = np.asarray(cam_points, np.float64).reshape(-1, 3)
    dst = np.asarray(world_points, np.float64).reshape(-1, 3)
    if len(src) < 3 or len(src) != len(dst):
        raise DegenerateConfiguration("need at least 3 point pairs")
    R, t, ok = _kabsch_batch(src[None], dst[None])
    if not ok[0]:
        raise DegenerateConfiguration("points are collinear or coincident")
    return RigidPose(R[0], t[0])


def _kabsch_batch(src: np.ndarray, dst: np.ndarray):
    """Vectorised Kabsch over stacked point sets (b, n, 3).

    Returns (R (b,3,3), t (b,3), ok (b,)) where ok flags non-degenerate
    configurations (second singular value bounded away from zero).
    """
    sc = src.mean(axis=1, keepdims=True)
    dc = dst.mean(axis=1, keepdims=True)
    H = np.einsum("bni,bnj->bij", src - sc, dst - dc)
    U, S, Vt = np.linalg.svd(H)
    det = np.linalg.det(U) * np.linalg.det(Vt)
    D = np.repeat(np.eye(3)[None], len(src), axis=0)
    D[:, 2, 2] = np.sign(det)
    # R = V D U^T maximises the trace of R H subject to det(R) = +1.
    R = np.einsum("bji,bjk,blk->bil", Vt, D, U)
    t = dc[:, 0] - np.einsum("bij,bj->bi", R, sc[:, 0])
    scale = np.linalg.norm(src - sc, axis=(1, 2)) + 1e-30
    ok = S[:, 1] > 1e-9 * scale
    return R, t, ok


# ---------------------------------------------------------------------------
# hypothesis generation and scoring


class HypothesisSet:
    """Stacked hypothesis poses with accumulated energies."""

    def __init__(self, rotations: np.ndarray, translations: np.ndarray):
        self.rotations = rotations.reshape(-1, 3, 3)
        self.translations = translations.reshape(-1, 3)
        self.energies = np.zeros(len(self.rotations))

    def __len__(self) -> int:
        return len(self.rotations)

    def select(self, idx) -> "HypothesisSet":
        out = HypothesisSet(self.rotations[idx], self.translations[idx])
        out.energies = self.energies[idx].copy()
        return out

    def pose(self, i: int) -> RigidPose:
        return RigidPose(self.rotations[i], self.translations[i])

    def to_hypotheses(self, cs: Optional[CorrespondenceSet] = None) -> list:
        return [PoseHypothesis(pose=self.pose(i),
                               energy=float(self.energies[i]))
                for i in range(len(self))]


def generate_hypotheses(cs: CorrespondenceSet, params: RansacParams,
                        rng: np.random.Generator) -> HypothesisSet:
    """Propose up to N_max poses from random checked 3-point samples.

    Each attempt samples 3 distinct pixels and one mode per pixel, then
    applies three checks: camera/world pairwise-distance consistency, a
    minimum separation between the sampled modes, and (when pixel colours
    are available) colour agreement with the mode colour centroids.
    """
    n = len(cs)
    budget = params.max_candidate_generation_iterations
    if n < 3:
        raise NoHypotheses(f"only {n} correspondences available", attempts=0)
    counts = np.diff(cs.offsets)
    R_out, t_out = [], []
    total = 0
    attempts = 0
    while attempts < budget and total < params.max_pose_candidates:
        batch = min(budget - attempts, 512)
        attempts += batch
        # 3 distinct correspondence indices per attempt.
        tri = rng.random((batch, n)).argpartition(2, axis=1)[:, :3]
        mode_pick = np.floor(rng.random((batch, 3))
                             * counts[tri]).astype(np.int64)
        mode_idx = cs.offsets[tri] + mode_pick
        c_pts = cs.cam_points[tri]              # (batch, 3, 3)
        w_pts = cs.mode_centroids[mode_idx]     # (batch, 3, 3)
        pair_i, pair_j = [0, 0, 1], [1, 2, 2]
        dc = np.linalg.norm(c_pts[:, pair_i] - c_pts[:, pair_j], axis=2)
        dw_sq = np.sum((w_pts[:, pair_i] - w_pts[:, pair_j]) ** 2, axis=2)
        dw = np.sqrt(dw_sq)
        ok = (np.abs(dc - dw) <= params.distance_consistency_tolerance
              ).all(axis=1)
        ok &= (dw_sq >=
               params.min_squared_distance_between_sampled_modes).all(axis=1)
        if cs.colours is not None:
            cdiff = np.abs(cs.colours[tri] - cs.mode_colours[mode_idx])
            ok &= (cdiff <= params.colour_tolerance).all(axis=(1, 2))
        if not ok.any():
            continue
        R, t, good = _kabsch_batch(c_pts[ok], w_pts[ok])
        R_out.append(R[good])
        t_out.append(t[good])
        total += int(good.sum())
    if total == 0:
        raise NoHypotheses("no hypothesis passed the checks",
                           attempts=attempts)
    R = np.concatenate(R_out)[:params.max_pose_candidates]
    t = np.concatenate(t_out)[:params.max_pose_candidates]
    return HypothesisSet(R, t)


def score_hypotheses(hs: HypothesisSet, cs: CorrespondenceSet,
                     sample_idx: np.ndarray,
                     params: RansacParams) -> np.ndarray:
    """Truncated robust energy of each hypothesis over sampled pixels.

    Per sampled correspondence the residual is the Euclidean distance from
    the transformed camera point to the nearest mode centroid, truncated at
    twice the translation-error threshold; the energy is the mean residual.
    """
    cam = cs.cam_points[sample_idx]                    # (s, 3)
    modes = cs.padded_centroids[sample_idx]            # (s, m, 3)
    cap = 2.0 * params.max_translation_error
    energies = np.empty(len(hs))
    chunk = max(1, int(2e7 // max(1, modes.size)))
    for start in range(0, len(hs), chunk):
        R = hs.rotations[start:start + chunk]
        t = hs.translations[start:start + chunk]
        world = np.einsum("hij,sj->hsi", R, cam) + t[:, None, :]
        d = np.linalg.norm(world[:, :, None, :] - modes[None], axis=-1)
        res = d.min(axis=2)                            # (h, s)
        energies[start:start + chunk] = np.minimum(res, cap).mean(axis=1)
    return energies


def score_and_cull(hs: HypothesisSet, cs: CorrespondenceSet,
                   params: RansacParams,
                   rng: np.random.Generator) -> HypothesisSet:
    """Score all hypotheses on one inlier sample; keep the best N_cull."""
    if len(hs) == 0:
        raise NoHypotheses("empty hypothesis set")
    sample = rng.integers(len(cs), size=params.inliers_per_iteration)
    hs.energies = score_hypotheses(hs, cs, sample, params)
    order = np.argsort(hs.energies, kind="stable")[:params.max_after_cull]
    return hs.select(order)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement


class SingularNormalEquations(Exception):
    pass


def _exp_so3(w: np.ndarray) -> np.ndarray:
    th = np.linalg.norm(w)
    if th < 1e-12:
        return np.eye(3)
    k = w / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


def lm_refine_arrays(rotation: np.ndarray, translation: np.ndarray,
                     cam_points: np.ndarray, targets: np.ndarray,
                     inv_covs: Optional[np.ndarray],
                     max_iterations: int = 20):
    """Minimise the (optionally covariance-weighted) squared residual sum.

    Residual r_i = R x_i + t - y_i; the update is a left-multiplied twist
    [dt, dw]. Returns (R, t, objective); never worse than the input.
    """
    R, t = rotation.copy(), translation.copy()
    n = len(cam_points)

    def objective(R, t):
        r = cam_points @ R.T + t - targets
        if inv_covs is None:
            return float(np.einsum("ni,ni->", r, r))
        return float(np.einsum("ni,nij,nj->", r, inv_covs, r))

    lam = 1e-3
    obj = objective(R, t)
    for _ in range(max_iterations):
        p = cam_points @ R.T + t
        r = p - targets
        J = np.zeros((n, 3, 6))
        J[:, :, :3] = np.eye(3)
        # d(dw x p)/d(dw) = -[p]x
        J[:, 0, 4], J[:, 0, 5] = p[:, 2], -p[:, 1]
        J[:, 1, 3], J[:, 1, 5] = -p[:, 2], p[:, 0]
        J[:, 2, 3], J[:, 2, 4] = p[:, 1], -p[:, 0]
        if inv_covs is None:
            A = np.einsum("nki,nkj->ij", J, J)
            b = -np.einsum("nki,nk->i", J, r)
        else:
            WJ = np.einsum("nkl,nli->nki", inv_covs, J)
            A = np.einsum("nki,nkj->ij", J, WJ)
            b = -np.einsum("nki,nk->i", WJ, r)
        stepped = False
        for _ in range(8):
            try:
                step = np.linalg.solve(A + lam * np.diag(np.diag(A))
                                       + 1e-12 * np.eye(6), b)
            except np.linalg.LinAlgError:
                raise SingularNormalEquations("normal equations singular")
            dR = _exp_so3(step[3:])
            R_new = dR @ R
            t_new = dR @ t + step[:3]
            obj_new = objective(R_new, t_new)
            if obj_new < obj:
                R, t, obj = R_new, t_new, obj_new
                lam = max(lam / 10.0, 1e-10)
                stepped = True
                break
            lam *= 10.0
        if not stepped or np.linalg.norm(step) < 1e-6:
            break
    # Re-orthonormalise against drift from repeated exp-map composition.
    U, _, Vt = np.linalg.svd(R)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return R, t, obj


def select_inliers(rotation, translation, cs: CorrespondenceSet,
                   sample_idx: np.ndarray, params: RansacParams):
    """Pick, per sampled pixel, the nearest mode under the given pose;
    keep pairs whose residual is under the truncation threshold."""
    cam = cs.cam_points[sample_idx]
    modes = cs.padded_centroids[sample_idx]
    world = cam @ rotation.T + translation
    d = np.linalg.norm(world[:, None, :] - modes, axis=-1)
    best = d.argmin(axis=1)
    dist = d[np.arange(len(cam)), best]
    keep = dist <= 2.0 * params.max_translation_error
    rows = np.nonzero(keep)[0]
    mode_flat = cs.offsets[sample_idx[rows]] + best[rows]
    return (cam[rows], cs.mode_centroids[mode_flat],
            cs.mode_inv_covs[mode_flat])


def lm_refine(h: PoseHypothesis, inliers, use_covariance: bool,
              ) -> PoseHypothesis:
    """Refine one hypothesis against explicit (camera, world[, invcov])
    inlier arrays. Falls back to the input pose if the solve degenerates."""
    cam, world = np.asarray(inliers[0]), np.asarray(inliers[1])
    inv_covs = None
    if use_covariance and len(inliers) > 2 and inliers[2] is not None:
        inv_covs = np.asarray(inliers[2])
    if len(cam) < 3:
        return h
    try:
        R, t, obj = lm_refine_arrays(h.pose.rotation, h.pose.translation,
                                     cam, world, inv_covs)
    except SingularNormalEquations:
        return replace(h, energy=h.energy)
    return PoseHypothesis(pose=RigidPose(R, t), energy=obj,
                          inliers=h.inliers)


def preemptive_ransac(hs: HypothesisSet, cs: CorrespondenceSet,
                      params: RansacParams, rng: np.random.Generator,
                      stage_clock: Optional[dict] = None) -> HypothesisSet:
    """Halve the candidate set on fresh inlier samples until 16 remain.

    Each round samples eta fresh correspondences, accumulates the energies
    of all surviving hypotheses, drops the worse half and (when pose_update
    is enabled) LM-refines the survivors on the sampled inliers.

    When given, `stage_clock` accumulates wall-clock seconds under the
    keys "sampling" (inlier sampling + energy) and "optimisation" (LM).
    """
    import time as _time
    if stage_clock is None:
        stage_clock = {"sampling": 0.0, "optimisation": 0.0}
    if len(hs) == 0:
        raise NoHypotheses("empty hypothesis set")
    current = hs
    while len(current) > params.final_count:
        t0 = _time.perf_counter()
        sample = rng.integers(len(cs), size=params.inliers_per_iteration)
        current.energies = current.energies + score_hypotheses(
            current, cs, sample, params)
        keep = max(params.final_count, len(current) // 2)
        order = np.argsort(current.energies, kind="stable")[:keep]
        current = current.select(order)
        stage_clock["sampling"] += _time.perf_counter() - t0
        t0 = _time.perf_counter()
        if params.pose_update:
            for i in range(len(current)):
                cam, world, inv_covs = select_inliers(
                    current.rotations[i], current.translations[i],
                    cs, sample, params)
                if len(cam) < 3:
                    continue
                try:
                    R, t, _ = lm_refine_arrays(
                        current.rotations[i], current.translations[i],
                        cam, world,
                        inv_covs if params.use_prediction_covariance
                        else None)
                except SingularNormalEquations:
                    continue
                current.rotations[i] = R
                current.translations[i] = t
        stage_clock["optimisation"] += _time.perf_counter() - t0
    if len(current) < params.final_count:
        # Pad by duplicating the best so downstream sees a fixed slate.
        reps = np.resize(np.arange(len(current)), params.final_count)
        current = current.select(np.sort(reps))
    return current
