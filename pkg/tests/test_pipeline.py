import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

import core.pipeline
from config.settings import AblationConfig, ImuConfig, RunConfig
from core.errors import EstimationError
from core.io.dataset import DatasetRecord, simulation_records, sort_records
from core.io.diagnostics import DiagnosticsLog
from core.io.trajectory_file import states_to_frame
from core.pipeline import FusionPipeline
from core.simulator.evaluation import evaluate
from core.simulator.generator import generate
from core.simulator.scenario import MultipathSpec, Scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def records(noise_free_run):
    return sort_records(simulation_records(noise_free_run))


def _run(records, config=None, diagnostics=None):
    states = []
    pipeline = FusionPipeline(config, sink=states.append, diagnostics=diagnostics)
    summary = pipeline.run(records)
    return states, summary


class TestFusionPipeline:
    def test_noise_free_run_is_accurate(self, records, noise_free_run):
        # Act
        states, summary = _run(records)

        # Assert
        assert summary.initialized_at == 0.0
        assert summary.epochs_processed == 12
        assert summary.states_written == len(states) == 13
        assert summary.rejected_tdcp == 0
        metrics = evaluate(states_to_frame(states), states_to_frame(noise_free_run.truth))
        assert metrics.matched == 13
        assert metrics.horizontal_rmse < 1e-3

    def test_states_are_emitted_in_time_order(self, records):
        # Act
        states, _ = _run(records)

        # Assert
        times = [s.timestamp for s in states]
        assert times == sorted(times)
        assert len(set(times)) == len(times)

    def test_radar_ablation(self, records):
        # Arrange
        config = RunConfig(ablation=AblationConfig(preset="ipt"))
        diagnostics_entries = []

        class _Recorder:
            def log_epoch(self, t, factor_counts, *args, **kwargs):
                diagnostics_entries.append(factor_counts)

            def summary(self):
                return {}

        # Act
        states, summary = _run(records, config, diagnostics=_Recorder())

        # Assert
        assert summary.states_written == 13
        assert all(counts.get("radar_velocity", 0) == 0 for counts in diagnostics_entries)

    def test_diagnostics_are_written(self, records, temp_workspace):
        # Arrange
        path = temp_workspace / "diagnostics.jsonl"

        # Act
        _, summary = _run(records, diagnostics=DiagnosticsLog(str(path)))

        # Assert
        entries = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(entries) == summary.epochs_processed
        assert entries[-1]["factor_counts"]["radar_velocity"] > 0
        assert all(e["rejected_tdcp"] == 0 for e in entries)

    def test_imu_only_stream_never_initializes(self, records):
        # Arrange
        imu_only = [r for r in records if r.type == "imu"]

        # Act & Assert
        with pytest.raises(EstimationError):
            _run(imu_only)

    def test_too_few_satellites_defers(self, records):
        # Arrange
        thinned = [
            DatasetRecord(r.type, r.t, r.payload.subset(["C01", "C02", "C03"])) if r.type == "gnss_epoch" else r
            for r in records
        ]
        pipeline = FusionPipeline(sink=lambda state: None)

        # Act & Assert
        with pytest.raises(EstimationError):
            pipeline.run(thinned)
        assert pipeline.summary.deferred_epochs == 11
        assert pipeline.summary.initialized_at is None

    def test_configured_frames_replace_metadata(self, records, noise_free_run):
        # Arrange
        meta = records[0].payload
        config = RunConfig.from_dict({"frames": {"enu_origin": meta["enu_origin"], "use_dataset_metadata": False}})

        # Act
        states, _ = _run(records, config)

        # Assert
        truth = states_to_frame(noise_free_run.truth).set_index("t")
        np.testing.assert_allclose(
            states_to_frame(states)[["px", "py", "pz"]].to_numpy()[:3],
            truth.loc[[0.0, 1.0, 2.0], ["px", "py", "pz"]].to_numpy(),
            atol=0.5,
        )

    def test_replay_is_deterministic(self, records):
        # Act
        first, _ = _run(records)
        second, _ = _run(records)

        # Assert
        assert [s.to_row() for s in first] == [s.to_row() for s in second]

    def test_bias_beyond_sanity_bound_stops_the_run(self, records, mocker):
        # Arrange
        solve = core.pipeline.optimize

        def drifting_optimize(problem, settings):
            states, report = solve(problem, settings)
            states[-1] = states[-1].replace(accel_bias=np.array([1.5, 0.0, 0.0]))
            problem.set_states(states)
            return states, report

        mocker.patch("core.pipeline.optimize", side_effect=drifting_optimize)

        # Act & Assert
        with pytest.raises(EstimationError, match="sanity bound"):
            _run(records)

    def test_bias_bound_is_configurable(self, records, mocker):
        # Arrange
        solve = core.pipeline.optimize

        def drifting_optimize(problem, settings):
            states, report = solve(problem, settings)
            states[-1] = states[-1].replace(accel_bias=np.array([1.5, 0.0, 0.0]))
            problem.set_states(states)
            return states, report

        mocker.patch("core.pipeline.optimize", side_effect=drifting_optimize)
        config = RunConfig(imu=ImuConfig(accel_bias_bound=5.0))

        # Act
        _, summary = _run(records, config)

        # Assert
        assert summary.epochs_processed == 12


@pytest.mark.slow
class TestAblationOrdering:
    """Preset accuracy on a shortened urban multipath scenario over several seeds."""

    SEEDS = (1, 2, 3)

    def _scenario(self, seed):
        urban = Scenario.from_file(str(SCENARIOS / "urban_multipath.json"))
        faults = dataclasses.replace(
            urban.faults,
            multipath=[
                MultipathSpec("C02", 20.0, 40.0, 10.0),
                MultipathSpec("C05", 20.0, 40.0, 15.0),
                MultipathSpec("C07", 25.0, 40.0, -12.0),
            ],
        )
        return dataclasses.replace(urban, duration=60.0, seed=seed, faults=faults)

    def test_mixture_and_radar_each_improve_accuracy(self):
        # Arrange
        errors = {preset: [] for preset in ("ipt", "radar_vmsf", "radar_unimsf")}

        for seed in self.SEEDS:
            run = generate(self._scenario(seed))
            records = sort_records(simulation_records(run))
            truth = states_to_frame(run.truth)

            # Act
            for preset in errors:
                states, _ = _run(records, RunConfig(ablation=AblationConfig(preset=preset)))
                errors[preset].append(evaluate(states_to_frame(states), truth).horizontal_rmse)

        # Assert
        median = {preset: float(np.median(values)) for preset, values in errors.items()}
        assert median["radar_unimsf"] < median["radar_vmsf"] < median["ipt"], median
