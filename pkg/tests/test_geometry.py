import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridreloc.geometry import (BehindCamera, CameraIntrinsics, DepthImage,
                                GeometryError, InvalidDepth, OutOfBounds,
                                PoseError, RigidPose, back_project,
                                back_project_image, pose_error, project,
                                rotation_about_axis, rotation_angle_deg)


def random_pose(rng):
    axis = rng.normal(size=3)
    R = rotation_about_axis(axis, rng.uniform(0, 180))
    return RigidPose(R, rng.normal(size=3))


class TestRigidPose:
    def test_identity(self):
        p = RigidPose.identity()
        assert np.allclose(p.apply([1.0, 2.0, 3.0]), [1, 2, 3])

    def test_invert_composes_to_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_pose(rng)
            q = p.compose(p.invert())
            assert np.allclose(q.rotation, np.eye(3), atol=1e-9)
            assert np.allclose(q.translation, 0.0, atol=1e-9)

    def test_compose_associative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b, c = (random_pose(rng) for _ in range(3))
            lhs = a.compose(b).compose(c)
            rhs = a.compose(b.compose(c))
            assert np.allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)

    def test_matrix_round_trip(self):
        p = random_pose(np.random.default_rng(2))
        q = RigidPose.from_matrix(p.matrix())
        assert np.allclose(p.matrix(), q.matrix())

    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            RigidPose(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(GeometryError):
            RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestDepthImage:
    def test_invalid_values_normalised_to_zero(self):
        d = DepthImage(np.array([[1.0, -2.0], [np.nan, np.inf]]))
        assert d.values[0, 0] == 1.0
        assert d.values[0, 1] == 0.0
        assert d.values[1, 0] == 0.0
        assert d.values[1, 1] == 0.0
        assert d.valid_mask.sum() == 1

    def test_at_out_of_bounds(self):
        d = DepthImage(np.ones((4, 4)))
        with pytest.raises(OutOfBounds):
            d.at((4, 0))


class TestBackProject:
    def test_identity_intrinsics(self):
        # u=(0,0), depth 2, unit focals, principal point at the corner.
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        depth = DepthImage(np.full((4, 4), 2.0))
        p = back_project((0, 0), depth, intr, RigidPose.identity())
        assert np.allclose(p, [0.0, 0.0, 2.0])

    def test_hand_pinhole_arithmetic(self):
        intr = CameraIntrinsics(fx=600, fy=600, cx=320, cy=240,
                                width=640, height=480)
        depth = DepthImage(np.full((480, 640), 3.0))
        p = back_project((380, 240), depth, intr, RigidPose.identity())
        assert np.allclose(p, [0.3, 0.0, 3.0])
        # Forward projection confirms the arithmetic.
        assert np.allclose(project(p, intr), [380.0, 240.0])

    def test_invalid_depth_raises(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        depth = DepthImage(np.zeros((4, 4)))
        with pytest.raises(InvalidDepth):
            back_project((1, 1), depth, intr, RigidPose.identity())

    def test_out_of_bounds_raises(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        depth = DepthImage(np.ones((4, 4)))
        with pytest.raises(OutOfBounds):
            back_project((9, 0), depth, intr, RigidPose.identity())

    def test_round_trip_1000_random_pixels(self):
        rng = np.random.default_rng(3)
        intr = CameraIntrinsics(fx=525, fy=525, cx=319.5, cy=239.5,
                                width=640, height=480)
        values = rng.uniform(0.5, 5.0, size=(480, 640))
        depth = DepthImage(values)
        for _ in range(1000):
            u = (int(rng.integers(640)), int(rng.integers(480)))
            p = back_project(u, depth, intr, RigidPose.identity())
            assert np.allclose(project(p, intr), u, atol=1e-6)

    def test_back_project_image_matches_per_pixel(self):
        rng = np.random.default_rng(4)
        intr = CameraIntrinsics(fx=100, fy=100, cx=16, cy=12,
                                width=32, height=24)
        depth = DepthImage(rng.uniform(0.5, 3.0, size=(24, 32)))
        pose = random_pose(rng)
        points, pixels = back_project_image(depth, intr, pose)
        assert len(points) == 24 * 32
        for k in rng.integers(len(points), size=10):
            x, y = pixels[k]
            expected = back_project((x, y), depth, intr, pose)
            assert np.allclose(points[k], expected, atol=1e-12)


class TestProject:
    def test_trivial(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        assert np.allclose(project([0, 0, 1], intr), [0.0, 0.0])

    def test_behind_camera(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(BehindCamera):
            project([0, 0, -1.0], intr)


class TestPoseError:
    def test_equal_poses(self):
        p = random_pose(np.random.default_rng(5))
        e = pose_error(p, p)
        assert e.translation_error == 0.0
        assert e.angular_error < 1e-6

    def test_five_degree_rotation(self):
        a = RigidPose.identity()
        b = RigidPose(rotation_about_axis([0, 0, 1], 5.0), np.zeros(3))
        e = pose_error(a, b)
        assert np.isclose(e.translation_error, 0.0)
        assert np.isclose(e.angular_error, 5.0, atol=1e-9)

    def test_success_criterion_requires_both(self):
        assert PoseError(0.04, 4.0).is_success(0.05, 5.0)
        assert not PoseError(0.06, 4.0).is_success(0.05, 5.0)
        assert not PoseError(0.04, 6.0).is_success(0.05, 5.0)

    def test_symmetric(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            ab, ba = pose_error(a, b), pose_error(b, a)
            assert np.isclose(ab.translation_error, ba.translation_error)
            assert np.isclose(ab.angular_error, ba.angular_error, atol=1e-9)


def test_rotation_angle_matches_construction():
    rng = np.random.default_rng(7)
    for _ in range(50):
        angle = rng.uniform(0, 179.0)
        R = rotation_about_axis(rng.normal(size=3), angle)
        assert np.isclose(rotation_angle_deg(R), angle, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-2, 2), z=st.floats(0.1, 10),
       fx=st.floats(50, 800), fy=st.floats(50, 800))
def test_project_back_project_inverse_property(x, y, z, fx, fy):
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=320, cy=240,
                            width=640, height=480)
    u = project([x, y, z], intr)
    if not (0 <= u[0] < 639 and 0 <= u[1] < 479):
        return
    depth = DepthImage(np.full((480, 640), z))
    p = back_project((u[0], u[1]), depth, intr, RigidPose.identity())
    assert np.allclose(p, [x, y, z], atol=1e-9)
