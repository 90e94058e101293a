"""Trajectory CSV files (estimates and ground truth share the layout)."""
import logging
import re
from pathlib import Path
from typing import Iterable, List

import pandas as pd

from core.backend.state import NavState
from core.errors import DatasetError

logger = logging.getLogger(__name__)

COLUMNS = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
    "bax", "bay", "baz", "bgx", "bgy", "bgz", "clock_bias", "clock_drift",
]
FLOAT_FORMAT = "%.17g"


def states_to_frame(states: Iterable[NavState]) -> pd.DataFrame:
    return pd.DataFrame([s.to_row() for s in states], columns=COLUMNS)


def frame_to_states(frame: pd.DataFrame) -> List[NavState]:
    return [
        NavState(
            timestamp=row.t,
            position=[row.px, row.py, row.pz],
            velocity=[row.vx, row.vy, row.vz],
            orientation=[row.qw, row.qx, row.qy, row.qz],
            accel_bias=[row.bax, row.bay, row.baz],
            gyro_bias=[row.bgx, row.bgy, row.bgz],
            clock_bias=row.clock_bias,
            clock_drift=row.clock_drift,
        )
        for row in frame.itertuples(index=False)
    ]


def write_trajectory(path: str, states: Iterable[NavState]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    states_to_frame(states).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


class TrajectoryWriter:
    """Appends states to a trajectory file as they become final."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.count = 0
        with self.path.open("w", encoding="utf-8") as f:
            f.write(",".join(COLUMNS) + "\n")

    def write(self, state: NavState) -> None:
        states_to_frame([state]).to_csv(
            self.path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        self.count += 1


def read_trajectory(path: str) -> pd.DataFrame:
    """Read and validate a trajectory file.

    Raises:
        DatasetError: If the header is wrong or a row is malformed (with its line number)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise DatasetError(f"Trajectory file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"Trajectory file is empty: {path}", line_number=1) from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise DatasetError(f"{path}: {exc}", line_number=int(match.group(1)) if match else None) from exc
    if list(frame.columns) != COLUMNS:
        raise DatasetError(f"{path}: unexpected header {list(frame.columns)}", line_number=1)
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        row = int(bad.to_numpy().argmax())
        raise DatasetError(f"{path}: malformed trajectory row", line_number=row + 2)
    logger.debug("Read %d trajectory rows from %s", len(numeric), path)
    return numeric.astype(float)
