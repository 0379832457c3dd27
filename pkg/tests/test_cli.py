import json

import pytest
from click.testing import CliRunner

from gridreloc.cli import main

TINY = ["--seed", "1", "--point-count", "4000", "--train-frames", "12",
        "--test-frames", "3", "--width", "96", "--height", "72",
        "--focal", "80"]


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(runner, tmp_path_factory):
    """synth-gen, then train on the generated world; shared by the
    downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    result = runner.invoke(main, ["synth-gen", "--out", str(root / "world")]
                           + TINY)
    assert result.exit_code == 0, result.output
    config = root / "small.cfg"
    config.write_text("reservoirCount 2048\nmaxPoseCandidates 256\n"
                      "maxPoseCandidatesAfterCull 32\n")
    result = runner.invoke(main, [
        "train", "--sequence", str(root / "world" / "train"),
        "--config", str(config), "--state", str(root / "state.pkl"),
        "--noise", "0.02", "--outliers", "0.1"])
    assert result.exit_code == 0, result.output
    return root


class TestSynthGen:
    def test_writes_sequences_and_config(self, workspace):
        world = workspace / "world"
        assert (world / "train" / "sequence.json").exists()
        assert (world / "test" / "sequence.json").exists()
        assert (world / "engine.cfg").exists()
        assert len(list((world / "train").glob("frame-*.bin"))) == 12


class TestTrain:
    def test_state_file_written(self, workspace):
        assert (workspace / "state.pkl").exists()

    def test_bad_config_key_fails(self, runner, workspace, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("cellsize 0.1\n")
        result = runner.invoke(main, [
            "train", "--sequence", str(workspace / "world" / "train"),
            "--config", str(bad), "--state", str(tmp_path / "s.pkl")])
        assert result.exit_code != 0


class TestRelocalise:
    def test_report_and_csv(self, runner, workspace, tmp_path):
        report_path = tmp_path / "report.json"
        csv_path = tmp_path / "frames.csv"
        result = runner.invoke(main, [
            "relocalise", "--state", str(workspace / "state.pkl"),
            "--sequence", str(workspace / "world" / "test"),
            "--report", str(report_path),
            "--frames-csv", str(csv_path)])
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert len(report["frames"]) == 3
        assert set(report) >= {"success_rate_5cm5deg",
                               "median_translation_m", "mean_timings_ms"}
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0].startswith("frame_index,")
        assert len(lines) == 4

    def test_novelty_report(self, runner, workspace, tmp_path):
        report_path = tmp_path / "report.json"
        result = runner.invoke(main, [
            "relocalise", "--state", str(workspace / "state.pkl"),
            "--sequence", str(workspace / "world" / "test"),
            "--report", str(report_path)])
        assert result.exit_code == 0, result.output
        out = tmp_path / "bins.csv"
        result = runner.invoke(main, [
            "novelty-report",
            "--train-sequence", str(workspace / "world" / "train"),
            "--test-sequence", str(workspace / "world" / "test"),
            "--report", str(report_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "bin,count,success_rate"
        assert len(lines) == 7  # header + five closed bins + open bin


class TestEvaluate:
    def test_one_shot_report(self, runner, tmp_path):
        report_path = tmp_path / "report.json"
        result = runner.invoke(main, ["evaluate"] + TINY + [
            "--noise", "0.02", "--outliers", "0.1",
            "--report", str(report_path)])
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert len(report["frames"]) == 3


class TestSweeps:
    def test_sweep_reservoirs_csv(self, runner, tmp_path):
        out = tmp_path / "sweep.csv"
        result = runner.invoke(main, ["sweep-reservoirs"] + TINY + [
            "--counts", "2048,1024", "--out", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "reservoir_count,occupied_cells,success_rate"
        assert len(lines) == 3

    def test_sweep_quality_csv(self, runner, tmp_path):
        out = tmp_path / "quality.csv"
        result = runner.invoke(main, ["sweep-quality"] + TINY + [
            "--fractions", "0.8", "--out", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "good_fraction,mode,success_rate"
        assert len(lines) == 3  # adapted + raw rows
