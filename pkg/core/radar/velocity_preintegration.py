"""Radar velocity preintegration and the relative-position residual it feeds."""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.backend.state import POS, ROT, STATE_DIM, NavState
from core.errors import PreintegrationError
from core.geodesy.rotation import quat_to_matrix, skew

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreintegratedRadarVelocity:
    """Displacement of the body between two keyframes, in the first body frame.

    Attributes:
        eta (np.ndarray): integrated displacement [m]
        dt_total (float): integrated time [s]
        covariance (np.ndarray): 3x3 covariance of eta
        start_time (float): timestamp of the first keyframe
    """

    eta: np.ndarray
    dt_total: float
    covariance: np.ndarray
    start_time: float = 0.0

    @classmethod
    def empty(cls, start_time: float = 0.0) -> "PreintegratedRadarVelocity":
        return cls(np.zeros(3), 0.0, np.zeros((3, 3)), float(start_time))

    @property
    def end_time(self) -> float:
        return self.start_time + self.dt_total


def integrate_velocity(
    state: PreintegratedRadarVelocity,
    v_body: np.ndarray,
    gamma_t: np.ndarray,
    dt: float,
    velocity_sigma: float = 0.15,
) -> PreintegratedRadarVelocity:
    """Accumulate ``R(gamma_t) v_body dt`` into eta.

    Raises:
        PreintegrationError: If ``dt`` is not positive
    """
    if not dt > 0.0:
        raise PreintegrationError(f"Velocity integration step must be positive, got {dt}")
    R = quat_to_matrix(gamma_t)
    step = R @ np.asarray(v_body, dtype=float) * dt
    covariance = state.covariance + (velocity_sigma * dt) ** 2 * (R @ R.T)
    return replace(
        state,
        eta=state.eta + step,
        dt_total=state.dt_total + dt,
        covariance=0.5 * (covariance + covariance.T),
    )


def velocity_residual(
    p: PreintegratedRadarVelocity,
    x_k: NavState,
    x_k1: NavState,
    with_jacobians: bool = False,
):
    """Residual ``R_k^T (p_{k+1} - p_k) - eta`` with optional 3x17 Jacobians."""
    R0 = x_k.rotation
    dp_body = R0.T @ (x_k1.position - x_k.position)
    r = dp_body - p.eta
    if not with_jacobians:
        return r
    J0 = np.zeros((3, STATE_DIM))
    J1 = np.zeros((3, STATE_DIM))
    J0[:, POS] = -R0.T
    J0[:, ROT] = skew(dp_body)
    J1[:, POS] = R0.T
    return r, (J0, J1)


class RadarVelocityIntegrator:
    """Builds one PreintegratedRadarVelocity per keyframe interval.

    Body velocities from valid scans are knots of a piecewise-linear velocity
    profile (held constant beyond the outermost knots). Each knot-to-knot
    segment is integrated with the midpoint rule, using the IMU-preintegrated
    rotation at the segment midpoint.
    """

    def __init__(self, velocity_sigma: float = 0.15):
        """Initialize the integrator.

        Args:
            velocity_sigma (float): per-scan velocity noise [m/s]
        """
        self.velocity_sigma = velocity_sigma
        self._last_knot: Optional[Tuple[float, np.ndarray]] = None

    def reset(self) -> None:
        self._last_knot = None

    def integrate_interval(
        self,
        t_start: float,
        t_end: float,
        estimates: Sequence[Tuple[float, "object"]],
        rotation_at: Callable[[float], np.ndarray],
    ) -> Optional[PreintegratedRadarVelocity]:
        """Integrate the scans observed in (t_start, t_end].

        Args:
            t_start (float): first keyframe time
            t_end (float): second keyframe time
            estimates (Sequence[Tuple[float, EgoVelocityEstimate]]): per-scan estimates
            rotation_at (Callable[[float], np.ndarray]): preintegrated rotation lookup

        Returns:
            Optional[PreintegratedRadarVelocity]: None when no valid scan
            fell inside the interval
        """
        valid: List[Tuple[float, np.ndarray]] = [
            (t, est.body_velocity) for t, est in estimates if est.valid
        ]
        if not valid:
            if estimates:
                logger.info("No valid radar velocity in (%.3f, %.3f]", t_start, t_end)
            return None

        knots = ([self._last_knot] if self._last_knot is not None else []) + valid
        self._last_knot = valid[-1]
        times = np.array([k[0] for k in knots])
        velocities = np.array([k[1] for k in knots])

        def velocity_at(t: float) -> np.ndarray:
            return np.array([np.interp(t, times, velocities[:, i]) for i in range(3)])

        breaks = [t_start] + [t for t in times if t_start < t < t_end] + [t_end]
        result = PreintegratedRadarVelocity.empty(t_start)
        for a, b in zip(breaks[:-1], breaks[1:]):
            if b <= a:
                continue
            mid = 0.5 * (a + b)
            result = integrate_velocity(
                result, velocity_at(mid), rotation_at(mid), b - a, self.velocity_sigma
            )

        missing = len(estimates) - len(valid)
        if missing:
            ratio = len(estimates) / len(valid)
            result = replace(result, covariance=result.covariance * ratio)
        return result
