import json
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from cli.main import cli

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _metrics(output: str) -> dict:
    lines = [json.loads(line) for line in output.splitlines()]
    return {(l["metric"], l.get("component")): l["value"] for l in lines}


@pytest.mark.slow
class TestEndToEnd:
    """Simulate, fuse and evaluate through the CLI."""

    def _run(self, tmp_path, scenario, *fuse_args):
        runner = CliRunner()
        data_dir, out_dir = tmp_path / "data", tmp_path / "out"

        result = runner.invoke(cli, ['simulate', '--scenario', str(SCENARIOS / scenario), '--out', str(data_dir)])
        assert result.exit_code == 0, result.output

        started = time.perf_counter()
        result = runner.invoke(cli, ['fuse', '--data', str(data_dir), '--out', str(out_dir), *fuse_args])
        fuse_seconds = time.perf_counter() - started
        assert result.exit_code == 0, result.output
        fuse_output = result.output

        result = runner.invoke(cli, [
            'evaluate', '--estimate', str(out_dir / "trajectory.csv"), '--truth', str(data_dir / "truth.csv"),
            '--format', 'json-lines',
        ])
        assert result.exit_code == 0, result.output
        return fuse_output, _metrics(result.output), fuse_seconds

    def test_noise_free_figure_eight(self, tmp_path):
        # Act
        fuse_output, metrics, fuse_seconds = self._run(tmp_path, "figure_eight.json")

        # Assert
        assert metrics[("matched_epochs", None)] == 121
        assert metrics[("rmse", "horizontal")] < 1e-3
        assert fuse_seconds < 30.0
        assert "Rejected TDCP measurements: 0" in fuse_output

    def test_urban_multipath_with_gmm(self, tmp_path):
        # Act
        fuse_output, metrics, _ = self._run(tmp_path, "urban_multipath.json", '--preset', 'radar_unimsf')

        # Assert
        assert metrics[("matched_epochs", None)] == 121
        assert metrics[("rmse", "3d")] < 10.0
        assert "Rejected TDCP measurements: 0" not in fuse_output

    def test_stationary_position_holds(self, tmp_path):
        # Act
        _, metrics, _ = self._run(tmp_path, "stationary.json", '--no-radar')

        # Assert
        assert metrics[("rmse", "horizontal")] < 0.5
