"""Shared fixtures: small synthetic worlds kept session-scoped because
frame rendering and online training dominate the suite's runtime."""

import numpy as np
import pytest

from gridreloc.geometry import CameraIntrinsics, DepthImage, RigidPose
from gridreloc.harness import SyntheticWorldSpec, generate_synthetic_world
from gridreloc.io_formats import FrameRecord


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticWorldSpec(point_count=20_000, train_frames=60,
                              test_frames=6, width=160, height=120,
                              focal=140.0)


@pytest.fixture(scope="session")
def small_world(small_spec):
    return generate_synthetic_world(small_spec)


@pytest.fixture
def flat_frame():
    """A 160x120 frame looking at a flat wall 2 m away, identity pose."""
    intr = CameraIntrinsics(fx=140.0, fy=140.0, cx=80.0, cy=60.0,
                            width=160, height=120)
    depth = DepthImage(np.full((120, 160), 2.0))
    rgb = np.full((120, 160, 3), 128, np.uint8)
    return FrameRecord(index=0, rgb=rgb, depth=depth,
                       pose=RigidPose.identity(), intrinsics=intr)
