"""SE(3) poses, pinhole camera model and pose-error metrics.

Conventions: world and camera frames are right-handed; camera looks down +z,
image u goes right, v goes down. Poses are camera-to-world unless stated
otherwise. All distances are in metres, angles in degrees at the API surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(Exception):
    pass


class InvalidDepth(GeometryError):
    pass


class OutOfBounds(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


@dataclass(frozen=True)
class RigidPose:
    """A rigid camera-to-world transform: p_world = R @ p_cam + t."""

    rotation: np.ndarray    # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise GeometryError("rotation has negative determinant")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return RigidPose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (n, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def invert(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


INVALID_DEPTH = 0.0


class DepthImage:
    """Per-pixel depth in metres; non-positive or non-finite means invalid.

    Values are normalised on construction so that every invalid pixel is
    stored as exactly 0.
    """

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=np.float64).copy()
        if v.ndim != 2:
            raise GeometryError("depth image must be 2-D")
        v[~np.isfinite(v) | (v <= 0)] = INVALID_DEPTH
        self.values = v
        self.height, self.width = v.shape

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    def at(self, u: tuple) -> float:
        x, y = int(u[0]), int(u[1])
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise OutOfBounds(f"pixel {u} outside {self.width}x{self.height}")
        return float(self.values[y, x])


@dataclass(frozen=True)
class PoseError:
    translation_error: float  # metres
    angular_error: float      # degrees

    def is_success(self, max_translation: float = 0.05,
                   max_angle: float = 5.0) -> bool:
        """Both thresholds must hold (the 5cm/5° criterion)."""
        return (self.translation_error <= max_translation
                and self.angular_error <= max_angle)


def back_project(u, depth: DepthImage, intrinsics: CameraIntrinsics,
                 pose: RigidPose) -> np.ndarray:
    """Lift pixel u to a world-space point using its measured depth.

    Computes pose(d * K^-1 * [u, 1]) for the depth d at u.
    """
    d = depth.at(u)
    if d <= 0:
        raise InvalidDepth(f"no valid depth at pixel {u}")
    x = (u[0] - intrinsics.cx) / intrinsics.fx * d
    y = (u[1] - intrinsics.cy) / intrinsics.fy * d
    return pose.apply(np.array([x, y, d]))


def back_project_image(depth: DepthImage, intrinsics: CameraIntrinsics,
                       pose: RigidPose, stride: int = 1):
    """Back-project every valid pixel (optionally strided).

    Returns (points (n, 3), pixel coords (n, 2)).
    """
    ys, xs = np.mgrid[0:depth.height:stride, 0:depth.width:stride]
    d = depth.values[ys, xs]
    mask = d > 0
    xs, ys, d = xs[mask], ys[mask], d[mask]
    cam = np.stack([(xs - intrinsics.cx) / intrinsics.fx * d,
                    (ys - intrinsics.cy) / intrinsics.fy * d,
                    d], axis=1)
    return pose.apply(cam), np.stack([xs, ys], axis=1)


def project(p, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a camera-space point to pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    if p[2] <= 0:
        raise BehindCamera(f"point has non-positive depth {p[2]}")
    return np.array([intrinsics.fx * p[0] / p[2] + intrinsics.cx,
                     intrinsics.fy * p[1] / p[2] + intrinsics.cy])


def rotation_angle_deg(R: np.ndarray) -> float:
    """Rotation angle of R in degrees, clamped against arccos overshoot."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_error(a: RigidPose, b: RigidPose) -> PoseError:
    t_err = float(np.linalg.norm(a.translation - b.translation))
    a_err = rotation_angle_deg(a.rotation @ b.rotation.T)
    return PoseError(t_err, a_err)


def rotation_about_axis(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        return np.eye(3)
    k = axis / n
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    th = np.radians(angle_deg)
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)
