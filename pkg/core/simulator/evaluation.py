"""Accuracy metrics of an estimated trajectory against ground truth."""
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pandas as pd

from core.errors import EvaluationError
from core.geodesy.rotation import quat_to_euler

logger = logging.getLogger(__name__)

MATCH_TOLERANCE = 0.01
MIN_OVERLAP = 0.9
AXES = ("east", "north", "up")
ATTITUDE = ("roll", "pitch", "yaw")


@dataclass
class EvaluationMetrics:
    """Per-axis and aggregate errors.

    Attributes:
        mae (Dict[str, float]): mean absolute position error per ENU axis [m]
        rmse (Dict[str, float]): root mean square position error per ENU axis [m]
        horizontal_rmse (float): 2D horizontal RMSE [m]
        rmse_3d (float): 3D RMSE [m]
        attitude_mae (Dict[str, float]): roll/pitch/yaw MAE [deg]
        attitude_rmse (Dict[str, float]): roll/pitch/yaw RMSE [deg]
        matched (int): number of time-aligned epochs
        errors (pd.DataFrame): per-epoch position and attitude error series
    """

    mae: Dict[str, float]
    rmse: Dict[str, float]
    horizontal_rmse: float
    rmse_3d: float
    attitude_mae: Dict[str, float]
    attitude_rmse: Dict[str, float]
    matched: int
    errors: pd.DataFrame = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "matched_epochs": self.matched,
            "mae": self.mae,
            "rmse": self.rmse,
            "horizontal_rmse": self.horizontal_rmse,
            "rmse_3d": self.rmse_3d,
            "attitude_mae_deg": self.attitude_mae,
            "attitude_rmse_deg": self.attitude_rmse,
        }


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def _euler(frame: pd.DataFrame) -> np.ndarray:
    quats = frame[["qw", "qx", "qy", "qz"]].to_numpy()
    return np.array([quat_to_euler(q) for q in quats])


def evaluate(estimate: pd.DataFrame, truth: pd.DataFrame) -> EvaluationMetrics:
    """Compare two trajectories in the trajectory-file column layout.

    Every estimate epoch is matched with the nearest truth epoch within 10 ms.

    Args:
        estimate (pd.DataFrame): estimated trajectory
        truth (pd.DataFrame): ground truth

    Returns:
        EvaluationMetrics: position and attitude error statistics

    Raises:
        EvaluationError: If fewer than 90% of the estimate epochs find a truth match
    """
    if estimate.empty or truth.empty:
        raise EvaluationError("Cannot evaluate an empty trajectory")
    est = estimate.sort_values("t").reset_index(drop=True)
    ref = truth.sort_values("t").reset_index(drop=True)
    merged = pd.merge_asof(
        est, ref, on="t", direction="nearest", tolerance=MATCH_TOLERANCE, suffixes=("", "_truth")
    ).dropna(subset=["px_truth"])
    overlap = len(merged) / len(est)
    if overlap < MIN_OVERLAP:
        raise EvaluationError(
            f"Only {overlap:.0%} of the estimate epochs overlap the truth (need {MIN_OVERLAP:.0%})"
        )

    position_error = merged[["px", "py", "pz"]].to_numpy() - merged[["px_truth", "py_truth", "pz_truth"]].to_numpy()
    truth_part = merged[["qw_truth", "qx_truth", "qy_truth", "qz_truth"]].set_axis(["qw", "qx", "qy", "qz"], axis=1)
    attitude_error = np.degrees(_wrap(_euler(merged) - _euler(truth_part)))

    errors = pd.DataFrame(
        np.column_stack([merged["t"].to_numpy(), position_error, attitude_error]),
        columns=["t", *AXES, *ATTITUDE],
    )
    mae = {a: float(np.mean(np.abs(errors[a]))) for a in AXES}
    rmse = {a: float(np.sqrt(np.mean(errors[a] ** 2))) for a in AXES}
    metrics = EvaluationMetrics(
        mae=mae,
        rmse=rmse,
        horizontal_rmse=float(np.sqrt(np.mean(position_error[:, 0] ** 2 + position_error[:, 1] ** 2))),
        rmse_3d=float(np.sqrt(np.mean(np.sum(position_error ** 2, axis=1)))),
        attitude_mae={a: float(np.mean(np.abs(errors[a]))) for a in ATTITUDE},
        attitude_rmse={a: float(np.sqrt(np.mean(errors[a] ** 2))) for a in ATTITUDE},
        matched=len(merged),
        errors=errors,
    )
    logger.debug("Evaluated %d epochs, horizontal RMSE %.4f m", metrics.matched, metrics.horizontal_rmse)
    return metrics
