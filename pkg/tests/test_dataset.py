import json
import logging

import numpy as np
import pytest

from core.errors import DatasetError
from core.io.dataset import DATASET_FILE, TRUTH_FILE, read_dataset, write_simulation
from core.io.trajectory_file import COLUMNS, TrajectoryWriter, read_trajectory, write_trajectory


def _write_lines(path, objects):
    path.write_text("".join(json.dumps(o) + "\n" for o in objects))
    return str(path)


@pytest.fixture
def written_run(temp_workspace, noise_free_run):
    counts = write_simulation(str(temp_workspace), noise_free_run)
    return temp_workspace, counts


class TestDataset:
    def test_write_simulation_counts(self, written_run):
        # Arrange
        _, counts = written_run

        # Assert
        assert counts == {"meta": 1, "imu": 1201, "radar_scan": 121, "gnss_epoch": 13, "ground_truth": 1201}

    def test_read_back_sorted(self, written_run, noise_free_run):
        # Arrange
        out_dir, _ = written_run

        # Act
        records = list(read_dataset(str(out_dir / DATASET_FILE)))

        # Assert
        assert records[0].type == "meta"
        assert records[0].payload["seed"] == 5
        times = [r.t for r in records]
        assert times == sorted(times)
        imu = [r.payload for r in records if r.type == "imu"]
        np.testing.assert_array_equal(imu[42].accel, noise_free_run.imu[42].accel)
        epochs = [r.payload for r in records if r.type == "gnss_epoch"]
        assert epochs[3].sat_ids == noise_free_run.gnss[3].sat_ids
        assert epochs[3].observations["C05"] == noise_free_run.gnss[3].observations["C05"]

    def test_same_timestamp_records_ordered_by_type(self, written_run):
        # Arrange
        out_dir, _ = written_run

        # Act
        at_one = [r.type for r in read_dataset(str(out_dir / DATASET_FILE)) if r.t == 1.0]

        # Assert
        assert at_one == ["imu", "radar_scan", "gnss_epoch"]

    def test_truth_file(self, written_run, noise_free_run):
        # Arrange
        out_dir, _ = written_run

        # Act
        truth = read_trajectory(str(out_dir / TRUTH_FILE))

        # Assert
        assert len(truth) == len(noise_free_run.truth)
        np.testing.assert_array_equal(truth.iloc[300].to_numpy(), noise_free_run.truth[300].to_row())

    def test_missing_file(self, temp_workspace):
        with pytest.raises(DatasetError):
            list(read_dataset(str(temp_workspace / "missing.jsonl")))

    def test_truncated_record_reports_line(self, written_run):
        # Arrange
        out_dir, _ = written_run
        path = out_dir / DATASET_FILE
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][: len(lines[-1]) // 2])

        # Act & Assert
        with pytest.raises(DatasetError) as exc_info:
            list(read_dataset(str(path)))
        assert exc_info.value.line_number == len(lines)

    def test_malformed_payload_reports_line(self, temp_workspace):
        # Arrange
        path = _write_lines(temp_workspace / "bad.jsonl", [
            {"type": "imu", "t": 0.0, "accel": [0.0, 0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
            {"type": "imu", "t": 0.01, "accel": [0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
        ])

        # Act & Assert
        with pytest.raises(DatasetError) as exc_info:
            list(read_dataset(path))
        assert exc_info.value.line_number == 2
        assert "line 2" in str(exc_info.value)

    def test_unknown_type_is_skipped(self, temp_workspace, caplog):
        # Arrange
        path = _write_lines(temp_workspace / "extra.jsonl", [
            {"type": "imu", "t": 0.0, "accel": [0.0, 0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
            {"type": "wheel_odometry", "t": 0.005, "speed": 1.0},
            {"type": "imu", "t": 0.01, "accel": [0.0, 0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
        ])

        # Act
        with caplog.at_level(logging.WARNING, logger="core.io.dataset"):
            records = list(read_dataset(path))

        # Assert
        assert [r.type for r in records] == ["imu", "imu"]
        assert "wheel_odometry" in caplog.text

    def test_decreasing_time_rejected(self, temp_workspace):
        # Arrange
        path = _write_lines(temp_workspace / "unsorted.jsonl", [
            {"type": "imu", "t": 1.0, "accel": [0.0, 0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
            {"type": "imu", "t": 0.5, "accel": [0.0, 0.0, 9.81], "gyro": [0.0, 0.0, 0.0]},
        ])

        # Act & Assert
        with pytest.raises(DatasetError) as exc_info:
            list(read_dataset(path))
        assert exc_info.value.line_number == 2


class TestTrajectoryFile:
    def test_malformed_row_reports_line(self, temp_workspace, noise_free_run):
        # Arrange
        path = temp_workspace / "estimate.csv"
        write_trajectory(str(path), noise_free_run.truth[:10])
        lines = path.read_text().splitlines()
        fields = lines[5].split(",")
        fields[3] = "abc"
        lines[5] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")

        # Act & Assert
        with pytest.raises(DatasetError) as exc_info:
            read_trajectory(str(path))
        assert exc_info.value.line_number == 6

    def test_wrong_header(self, temp_workspace):
        # Arrange
        path = temp_workspace / "estimate.csv"
        path.write_text("t,x,y,z\n0,1,2,3\n")

        # Act & Assert
        with pytest.raises(DatasetError) as exc_info:
            read_trajectory(str(path))
        assert exc_info.value.line_number == 1

    def test_missing_file(self, temp_workspace):
        with pytest.raises(DatasetError):
            read_trajectory(str(temp_workspace / "missing.csv"))

    def test_writer_appends_rows(self, temp_workspace, noise_free_run):
        # Arrange
        path = temp_workspace / "live.csv"
        writer = TrajectoryWriter(str(path))

        # Act
        for state in noise_free_run.truth[:3]:
            writer.write(state)

        # Assert
        frame = read_trajectory(str(path))
        assert writer.count == 3
        assert list(frame.columns) == COLUMNS
        np.testing.assert_array_equal(frame["t"].to_numpy(), [s.timestamp for s in noise_free_run.truth[:3]])
