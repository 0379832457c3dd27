"""Key-value text configuration for the relocalisation pipeline.

The file format is one `key value` (or `key = value`) pair per line,
with `#` comments. Keys follow the hyperparameter names used in the
published description of the method (camelCase), plus a handful of
implementation defaults. Unknown keys are an error rather than a
warning: a typo in a sweep config should not silently run the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .ransac import RansacParams
from .relocaliser import Relocaliser


class ConfigError(ValueError):
    """Raised for unknown keys or malformed values."""


@dataclass
class EngineConfig:
    """Every tunable of the engine under its external config name."""

    cellSize: float = 0.1
    cellsPerSide: int = 128
    reservoirCount: int = 16384
    reservoirCapacity: int = 4096
    clustererSigma: float = 0.1
    clustererTau: float = 0.05
    maxClusterCount: int = 50
    minClusterSize: int = 20
    reclusterInterval: int = 128
    maxPoseCandidates: int = 1024
    maxPoseCandidatesAfterCull: int = 64
    ransacInliersPerIteration: int = 512
    maxCandidateGenerationIterations: int = 6000
    minSquaredDistanceBetweenSampledModes: float = 0.09
    maxTranslationErrorForCorrectPose: float = 0.05
    usePredictionCovarianceForPoseOptimization: bool = True
    poseUpdate: bool = True
    finalCandidateCount: int = 16
    useIcp: bool = True
    useRanking: bool = True
    rawPredictions: bool = False
    rawModeSigma: float = 0.05
    modelVoxelSize: float = 0.01
    modelFrameInterval: int = 10
    modelPixelStride: int = 1
    seed: int = 0

    def ransac_params(self) -> RansacParams:
        return RansacParams(
            max_pose_candidates=self.maxPoseCandidates,
            max_after_cull=self.maxPoseCandidatesAfterCull,
            inliers_per_iteration=self.ransacInliersPerIteration,
            max_candidate_generation_iterations=(
                self.maxCandidateGenerationIterations),
            min_squared_distance_between_sampled_modes=(
                self.minSquaredDistanceBetweenSampledModes),
            max_translation_error=self.maxTranslationErrorForCorrectPose,
            pose_update=self.poseUpdate,
            use_prediction_covariance=(
                self.usePredictionCovarianceForPoseOptimization),
            final_count=self.finalCandidateCount)

    def build_relocaliser(self, predictor=None) -> Relocaliser:
        return Relocaliser(
            predictor=predictor,
            cell_size=self.cellSize,
            cells_per_side=self.cellsPerSide,
            reservoir_count=self.reservoirCount,
            reservoir_capacity=self.reservoirCapacity,
            clusterer_sigma=self.clustererSigma,
            clusterer_tau=self.clustererTau,
            max_cluster_count=self.maxClusterCount,
            min_cluster_size=self.minClusterSize,
            recluster_interval=self.reclusterInterval,
            ransac=self.ransac_params(),
            model_voxel_size=self.modelVoxelSize,
            model_frame_interval=self.modelFrameInterval,
            model_pixel_stride=self.modelPixelStride,
            use_icp=self.useIcp,
            use_ranking=self.useRanking,
            raw_predictions=self.rawPredictions,
            raw_mode_sigma=self.rawModeSigma,
            seed=self.seed)


_FIELD_TYPES = {f.name: f.type for f in fields(EngineConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind in ("bool", bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_config_text(text: str) -> EngineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.replace("=", " ", 1).split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected 'key value', "
                              f"got {line!r}")
        key, raw = parts
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return EngineConfig(**values)


def load_config(path) -> EngineConfig:
    return parse_config_text(Path(path).read_text())


def save_config(cfg: EngineConfig, path) -> None:
    lines = [f"{f.name} {getattr(cfg, f.name)}"
             for f in fields(EngineConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
