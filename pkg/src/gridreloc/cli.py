"""Command-line interface for the relocalisation pipeline.

Subcommands cover the full experiment loop: generate a synthetic world,
train the engine online, relocalise a test sequence, and run the
ablation sweeps. Trained state is persisted with pickle; predictors are
small module-level callables so state files survive the round trip.
"""

import json
import pickle
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .config import EngineConfig, load_config, save_config
from .harness import (PipelineConfig, SyntheticWorldSpec, evaluate,
                      generate_synthetic_world, novelty_binning,
                      standard_warp, sweep_correspondence_quality,
                      sweep_reservoir_count, write_csv)
from .io_formats import load_sequence, save_sequence_native
from .predictor import (PredictionStore, SyntheticPredictorConfig,
                        predict_from_file, predict_synthetic)


class SyntheticPredictor:
    """Picklable wrapper around the synthetic prediction oracle."""

    def __init__(self, config: SyntheticPredictorConfig):
        self.config = config

    def __call__(self, frame):
        return predict_synthetic(frame, self.config)


class FilePredictor:
    """Replays prediction files from a directory, one per frame index."""

    def __init__(self, directory):
        self.store = PredictionStore(directory)

    def __call__(self, frame):
        return predict_from_file(frame.index, self.store)


def _scene_bounds(frames, margin=0.5):
    """Axis-aligned bounds of the back-projected scene, padded a little,
    for placing synthetic outliers."""
    from .geometry import back_project_image
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for frame in frames[:: max(1, len(frames) // 10)]:
        points, _ = back_project_image(frame.depth, frame.intrinsics,
                                       frame.pose, stride=8)
        if len(points):
            lo = np.minimum(lo, points.min(axis=0))
            hi = np.maximum(hi, points.max(axis=0))
    if not np.isfinite(lo).all():
        lo, hi = -np.ones(3), np.ones(3)
    return lo - margin, hi + margin


def _build_synthetic_predictor(frames, warp, noise, outliers, seed):
    if warp:
        A, b = standard_warp()
    else:
        A, b = np.eye(3), np.zeros(3)
    lo, hi = _scene_bounds(frames)
    corners = np.array([[sx, sy, sz] for sx in (lo[0], hi[0])
                        for sy in (lo[1], hi[1])
                        for sz in (lo[2], hi[2])]) @ A.T + b
    cfg = SyntheticPredictorConfig(
        warp_matrix=A, warp_offset=b, noise_sigma=noise,
        outlier_fraction=outliers,
        outlier_box_min=corners.min(axis=0),
        outlier_box_max=corners.max(axis=0), seed=seed)
    return SyntheticPredictor(cfg)


def _world_options(f):
    for option in reversed([
            click.option("--seed", default=0, show_default=True),
            click.option("--point-count", default=50_000,
                         show_default=True),
            click.option("--train-frames", default=200, show_default=True),
            click.option("--test-frames", default=50, show_default=True),
            click.option("--width", default=320, show_default=True),
            click.option("--height", default=240, show_default=True),
            click.option("--focal", default=280.0, show_default=True)]):
        f = option(f)
    return f


def _spec_from_options(seed, point_count, train_frames, test_frames,
                       width, height, focal):
    return SyntheticWorldSpec(seed=seed, point_count=point_count,
                              train_frames=train_frames,
                              test_frames=test_frames, width=width,
                              height=height, focal=focal)


def _predictor_options(f):
    for option in reversed([
            click.option("--predictions", type=click.Path(exists=True),
                         default=None,
                         help="Directory of prediction files; replaces "
                              "the synthetic oracle."),
            click.option("--warp/--no-warp", default=False,
                         show_default=True,
                         help="Use the fixed affine 'wrong scene' warp."),
            click.option("--noise", default=0.05, show_default=True,
                         help="Prediction noise sigma in metres."),
            click.option("--outliers", default=0.3, show_default=True,
                         help="Fraction of outlier predictions."),
            click.option("--predictor-seed", default=0,
                         show_default=True)]):
        f = option(f)
    return f


def _report_dict(report):
    return report.to_json_dict()


@click.group()
def main():
    """Grid-adapted scene-coordinate relocalisation toolkit."""


@main.command("synth-gen")
@_world_options
@click.option("--out", type=click.Path(), required=True,
              help="Output directory for train/ and test/ sequences.")
def synth_gen(out, **world_kw):
    """Generate a synthetic RGB-D world and write its sequences."""
    spec = _spec_from_options(**world_kw)
    _, train, test = generate_synthetic_world(spec)
    out = Path(out)
    save_sequence_native(train, out / "train")
    save_sequence_native(test, out / "test")
    save_config(EngineConfig(), out / "engine.cfg")
    click.echo(f"wrote {len(train)} train + {len(test)} test frames "
               f"to {out}")


@main.command()
@click.option("--sequence", type=click.Path(exists=True), required=True,
              help="Training sequence directory (native format).")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Engine config file.")
@click.option("--state", type=click.Path(), required=True,
              help="Where to write the trained engine state.")
@_predictor_options
def train(sequence, config_path, state, predictions, warp, noise,
          outliers, predictor_seed):
    """Train the engine online over a sequence and persist its state."""
    frames = load_sequence(sequence, format="synthetic_native")
    cfg = load_config(config_path) if config_path else EngineConfig()
    if predictions:
        predictor = FilePredictor(predictions)
    else:
        predictor = _build_synthetic_predictor(frames, warp, noise,
                                               outliers, predictor_seed)
    reloc = cfg.build_relocaliser(predictor)
    reloc.fit(frames)
    with open(state, "wb") as f:
        pickle.dump(reloc, f)
    click.echo(f"trained on {len(frames)} frames; "
               f"{reloc.occupied_cell_count} occupied cells; "
               f"state saved to {state}")


@main.command()
@click.option("--state", type=click.Path(exists=True), required=True)
@click.option("--sequence", type=click.Path(exists=True), required=True,
              help="Test sequence directory (native format).")
@click.option("--report", "report_path", type=click.Path(), required=True,
              help="Output JSON report.")
@click.option("--frames-csv", type=click.Path(), default=None,
              help="Optional per-frame CSV.")
def relocalise(state, sequence, report_path, frames_csv):
    """Relocalise every frame of a sequence against trained state."""
    with open(state, "rb") as f:
        reloc = pickle.load(f)
    frames = load_sequence(sequence, format="synthetic_native")
    report = evaluate(reloc, frames)
    Path(report_path).write_text(json.dumps(_report_dict(report),
                                            indent=2))
    if frames_csv:
        rows = [{"frame_index": r.frame_index,
                 "success": r.success,
                 "translation_error_m": (r.error.translation_error
                                         if r.error else ""),
                 "rotation_error_deg": (r.error.angular_error
                                        if r.error else "")}
                for r in report.frames]
        write_csv(rows, frames_csv)
    click.echo(f"success rate: {report.success_rate:.3f}; "
               f"report saved to {report_path}")


@main.command("evaluate")
@_world_options
@_predictor_options
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--report", "report_path", type=click.Path(), required=True)
def evaluate_cmd(config_path, report_path, predictions, warp, noise,
                 outliers, predictor_seed, **world_kw):
    """Generate a world, train, and evaluate in one shot."""
    spec = _spec_from_options(**world_kw)
    _, train_frames, test_frames = generate_synthetic_world(spec)
    cfg = load_config(config_path) if config_path else EngineConfig()
    if predictions:
        predictor = FilePredictor(predictions)
    else:
        predictor = _build_synthetic_predictor(train_frames, warp, noise,
                                               outliers, predictor_seed)
    reloc = cfg.build_relocaliser(predictor)
    reloc.fit(train_frames)
    report = evaluate(reloc, test_frames)
    Path(report_path).write_text(json.dumps(_report_dict(report),
                                            indent=2))
    click.echo(f"success rate: {report.success_rate:.3f}")



@main.command("sweep-reservoirs")
@_world_options
@click.option("--counts", required=True,
              help="Comma-separated reservoir counts, e.g. 16384,8192.")
@click.option("--warp/--no-warp", default=False, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output CSV.")
def sweep_reservoirs(counts, warp, out, **world_kw):
    """Success rate as a function of the shared reservoir count."""
    spec = _spec_from_options(**world_kw)
    values = [int(c) for c in counts.split(",") if c.strip()]
    rows = sweep_reservoir_count(spec, values,
                                 cfg=PipelineConfig(use_warp=warp))
    write_csv(rows, out)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command("sweep-quality")
@_world_options
@click.option("--fractions", default="0.2,0.4,0.6,0.8,1.0",
              show_default=True,
              help="Comma-separated good-correspondence fractions.")
@click.option("--out", type=click.Path(), required=True)
def sweep_quality(fractions, out, **world_kw):
    """Adapted vs raw success across correspondence-quality levels."""
    spec = _spec_from_options(**world_kw)
    values = [float(c) for c in fractions.split(",") if c.strip()]
    rows = sweep_correspondence_quality(spec, values)
    write_csv(rows, out)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command("novelty-report")
@click.option("--train-sequence", type=click.Path(exists=True),
              required=True)
@click.option("--test-sequence", type=click.Path(exists=True),
              required=True)
@click.option("--report", "report_path", type=click.Path(exists=True),
              required=True, help="JSON report from relocalise/evaluate.")
@click.option("--out", type=click.Path(), required=True,
              help="Output CSV of per-novelty-bin success rates.")
def novelty_report(train_sequence, test_sequence, report_path, out):
    """Bin test frames by pose novelty and report success per bin."""
    train_frames = load_sequence(train_sequence,
                                 format="synthetic_native")
    test_frames = load_sequence(test_sequence, format="synthetic_native")
    report = json.loads(Path(report_path).read_text())
    success = {f["frame_index"]: f["success"] for f in report["frames"]}
    ordered = [f for f in test_frames if f.index in success]
    binning = novelty_binning([f.pose for f in train_frames],
                              [f.pose for f in ordered],
                              [success[f.index] for f in ordered])
    rows = [{"bin": label, "count": count, "success_rate": rate}
            for label, count, rate in zip(binning.labels(),
                                          binning.counts,
                                          binning.success_rates)]
    write_csv(rows, out)
    click.echo(f"wrote {len(rows)} bins to {out}")


if __name__ == "__main__":
    main()
