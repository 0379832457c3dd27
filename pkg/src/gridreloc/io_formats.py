"""Sequence ingestion and the binary file formats shared across components.

Three on-disk artefacts live here:

* RGB-D sequences, in either a 7-Scenes-style directory of PNGs and pose
  text files, or a simple binary-per-frame native layout that is easy to
  read from other languages.
* Prediction files: per-frame grids of predicted 3D points at 1/8 image
  resolution. This is the only contract between the relocaliser and an
  external trainer.
* Scene point models: flat coloured point clouds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, DepthImage, RigidPose

DEPTH_MM_INVALID = 65535

FRAME_MAGIC = b"RELOCFRM"
PREDICTION_MAGIC = b"RELOCPRD"
MODEL_MAGIC = b"RELOCMDL"


class FormatError(Exception):
    pass


class MissingPose(FormatError):
    pass


@dataclass
class FrameRecord:
    index: int
    rgb: np.ndarray          # (h, w, 3) uint8
    depth: DepthImage
    pose: Optional[RigidPose]  # camera-to-world; None for query frames
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if self.rgb.shape[:2] != (self.depth.height, self.depth.width):
            raise FormatError("rgb and depth dimensions differ")


@dataclass
class PredictionFile:
    frame_index: int
    points: np.ndarray  # (grid_h, grid_w, 3) float32
    valid: np.ndarray   # (grid_h, grid_w) bool

    @property
    def grid_width(self) -> int:
        return self.points.shape[1]

    @property
    def grid_height(self) -> int:
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# sequence loading


def _load_intrinsics_file(path: Path) -> CameraIntrinsics:
    kv = {}
    try:
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = line.replace("=", " ").split(None, 1)
            kv[key] = float(value)
    except (OSError, ValueError) as e:
        raise FormatError(f"bad intrinsics file {path}: {e}")
    try:
        return CameraIntrinsics(fx=kv["fx"], fy=kv["fy"], cx=kv["cx"],
                                cy=kv["cy"], width=int(kv["width"]),
                                height=int(kv["height"]))
    except KeyError as e:
        raise FormatError(f"intrinsics file {path} missing key {e}")


def _load_pose_txt(path: Path) -> RigidPose:
    try:
        m = np.loadtxt(path)
    except OSError:
        raise MissingPose(f"missing pose file {path}")
    except ValueError as e:
        raise FormatError(f"bad pose file {path}: {e}")
    if m.shape != (4, 4):
        raise FormatError(f"pose file {path} is not a 4x4 matrix")
    return RigidPose.from_matrix(m)


def _load_seven_scenes_like(path: Path) -> list[FrameRecord]:
    colour_files = sorted(path.glob("frame-*.color.png"))
    if not colour_files:
        raise FormatError(f"no frame-*.color.png files in {path}")
    default_intr_path = path / "intrinsics.txt"
    default_intr = (_load_intrinsics_file(default_intr_path)
                    if default_intr_path.exists() else None)
    frames = []
    for cf in colour_files:
        stem = cf.name[:-len(".color.png")]
        index = int(stem.split("-")[1])
        rgb = np.asarray(Image.open(cf).convert("RGB"), dtype=np.uint8)
        depth_path = path / f"{stem}.depth.png"
        if not depth_path.exists():
            raise FormatError(f"missing depth image for {stem}")
        depth_mm = np.asarray(Image.open(depth_path), dtype=np.float64)
        if depth_mm.ndim != 2:
            raise FormatError(f"depth image {depth_path} is not single-channel")
        depth_m = depth_mm / 1000.0
        depth_m[depth_mm == DEPTH_MM_INVALID] = 0.0
        pose = _load_pose_txt(path / f"{stem}.pose.txt")
        override = path / f"{stem}.intrinsics.txt"
        if override.exists():
            intr = _load_intrinsics_file(override)
        elif default_intr is not None:
            intr = default_intr
        else:
            raise FormatError(f"no intrinsics for {stem} and no intrinsics.txt")
        frames.append(FrameRecord(index=index, rgb=rgb,
                                  depth=DepthImage(depth_m), pose=pose,
                                  intrinsics=intr))
    frames.sort(key=lambda f: f.index)
    return frames


def save_frame_native(frame: FrameRecord, path) -> None:
    """Write one frame in the native binary layout (see load_sequence)."""
    h, w = frame.depth.height, frame.depth.width
    if frame.pose is None:
        raise MissingPose(f"frame {frame.index} has no pose to save")
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(np.ascontiguousarray(frame.rgb, dtype=np.uint8).tobytes())
        f.write(frame.depth.values.astype("<f4").tobytes())
        f.write(frame.pose.matrix().astype("<f8").tobytes())


def _load_frame_native(path: Path, index: int,
                       intr: CameraIntrinsics) -> FrameRecord:
    data = path.read_bytes()
    if len(data) < 16 or data[:8] != FRAME_MAGIC:
        raise FormatError(f"bad magic in {path}")
    w, h = struct.unpack_from("<II", data, 8)
    off = 16
    n_rgb, n_depth, n_pose = w * h * 3, w * h * 4, 16 * 8
    if len(data) != off + n_rgb + n_depth + n_pose:
        raise FormatError(f"truncated frame file {path}")
    rgb = np.frombuffer(data, np.uint8, n_rgb, off).reshape(h, w, 3).copy()
    off += n_rgb
    depth = np.frombuffer(data, "<f4", w * h, off).reshape(h, w)
    off += n_depth
    pose = RigidPose.from_matrix(np.frombuffer(data, "<f8", 16, off))
    return FrameRecord(index=index, rgb=rgb, depth=DepthImage(depth),
                       pose=pose, intrinsics=intr)


def _load_synthetic_native(path: Path) -> list[FrameRecord]:
    meta_path = path / "sequence.json"
    if not meta_path.exists():
        raise FormatError(f"missing sequence.json in {path}")
    try:
        meta = json.loads(meta_path.read_text())
        intr = CameraIntrinsics(**meta["intrinsics"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad sequence.json: {e}")
    frames = []
    for fp in sorted(path.glob("frame-*.bin")):
        index = int(fp.stem.split("-")[1])
        frames.append(_load_frame_native(fp, index, intr))
    frames.sort(key=lambda f: f.index)
    return frames


def save_sequence_native(frames, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    intr = frames[0].intrinsics
    meta = {"intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx,
                           "cy": intr.cy, "width": intr.width,
                           "height": intr.height},
            "frame_count": len(frames)}
    (path / "sequence.json").write_text(json.dumps(meta, indent=2))
    for frame in frames:
        save_frame_native(frame, path / f"frame-{frame.index:06d}.bin")


def load_sequence(path, format: str = "seven_scenes_like") -> list[FrameRecord]:
    """Load an RGB-D sequence with known poses, in frame-index order."""
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"{path} is not a directory")
    if format == "seven_scenes_like":
        return _load_seven_scenes_like(path)
    if format == "synthetic_native":
        return _load_synthetic_native(path)
    raise ValueError(f"unknown sequence format {format!r}")


def save_sequence_seven_scenes(frames, path) -> None:
    """Write frames in the 7-Scenes-style PNG + pose-text layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    intr = frames[0].intrinsics
    (path / "intrinsics.txt").write_text(
        f"fx {intr.fx}\nfy {intr.fy}\ncx {intr.cx}\ncy {intr.cy}\n"
        f"width {intr.width}\nheight {intr.height}\n")
    for frame in frames:
        stem = f"frame-{frame.index:06d}"
        Image.fromarray(frame.rgb).save(path / f"{stem}.color.png")
        mm = np.round(frame.depth.values * 1000.0).astype(np.int32)
        mm[frame.depth.values <= 0] = DEPTH_MM_INVALID
        mm = np.clip(mm, 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path / f"{stem}.depth.png")
        if frame.pose is None:
            raise MissingPose(f"frame {frame.index} has no pose")
        np.savetxt(path / f"{stem}.pose.txt", frame.pose.matrix())


# ---------------------------------------------------------------------------
# prediction files


def save_predictions(p: PredictionFile, path) -> None:
    gh, gw = p.points.shape[:2]
    valid = np.ascontiguousarray(p.valid, dtype=np.uint8)
    points = np.where(p.valid[..., None], p.points, 0).astype("<f4")
    with open(path, "wb") as f:
        f.write(PREDICTION_MAGIC)
        f.write(struct.pack("<IIII", 1, p.frame_index, gw, gh))
        f.write(valid.tobytes())
        f.write(points.tobytes())


def load_predictions(path) -> PredictionFile:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != PREDICTION_MAGIC:
        raise FormatError(f"bad magic in {path}")
    version, frame_index, gw, gh = struct.unpack_from("<IIII", data, 8)
    if version != 1:
        raise FormatError(f"unsupported prediction file version {version}")
    off = 24
    n = gw * gh
    if len(data) != off + n + n * 12:
        raise FormatError(f"truncated prediction file {path}")
    valid = np.frombuffer(data, np.uint8, n, off).reshape(gh, gw) != 0
    points = np.frombuffer(data, "<f4", n * 3, off + n).reshape(gh, gw, 3)
    return PredictionFile(frame_index=frame_index, points=points.copy(),
                          valid=valid.copy())


# ---------------------------------------------------------------------------
# scene point models


def save_scene_model_arrays(positions: np.ndarray, colours: np.ndarray,
                            path) -> None:
    positions = np.ascontiguousarray(positions, dtype="<f4").reshape(-1, 3)
    colours = np.ascontiguousarray(colours, dtype="<f4").reshape(-1, 3)
    if len(positions) != len(colours):
        raise FormatError("positions and colours differ in length")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IQ", 1, len(positions)))
        f.write(positions.tobytes())
        f.write(colours.tobytes())


def load_scene_model_arrays(path):
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MODEL_MAGIC:
        raise FormatError(f"bad magic in {path}")
    version, count = struct.unpack_from("<IQ", data, 8)
    if version != 1:
        raise FormatError(f"unsupported scene model version {version}")
    off = 20
    if len(data) != off + count * 24:
        raise FormatError(f"truncated scene model file {path}")
    positions = np.frombuffer(data, "<f4", count * 3, off).reshape(-1, 3)
    colours = np.frombuffer(data, "<f4", count * 3,
                            off + count * 12).reshape(-1, 3)
    return positions.copy(), colours.copy()
