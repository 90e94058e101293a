"""Bootstrapping of the first window state from GNSS fixes and the IMU."""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.backend.state import NavState
from core.errors import InitializationDeferred
from core.geodesy.frames import FrameSet, GeodeticPoint, ecef_to_enu, ecef_to_geodetic
from core.geodesy.rotation import quat_from_euler, quat_to_matrix
from core.gnss.observations import GnssEpoch
from core.gnss.spp import SppSolution, solve_spp
from core.preintegration.imu_preintegration import ImuSample

logger = logging.getLogger(__name__)

MIN_IMU_SPAN = 1.0
MIN_HEADING_SPEED = 0.5


@dataclass(frozen=True, eq=False)
class InitializationResult:
    """First window state and the frames anchored at the first fix."""

    state: NavState
    frames: FrameSet
    fixes: Tuple[SppSolution, ...]


def _velocity_and_acceleration(times: np.ndarray, positions: np.ndarray):
    """Derivatives at the first fix from a polynomial through the fixes."""
    t = times - times[0]
    if len(t) >= 3:
        coeffs = np.polyfit(t[:3], positions[:3], 2)
        return coeffs[1], 2.0 * coeffs[0]
    return (positions[1] - positions[0]) / t[1], np.zeros(3)


def _roll_pitch(specific_force: np.ndarray) -> Tuple[float, float]:
    fx, fy, fz = specific_force
    return math.atan2(fy, fz), math.atan2(-fx, math.hypot(fy, fz))


def initialize(
    first_epochs: Sequence[GnssEpoch],
    imu_buffer: Sequence[ImuSample],
    lever_arm_gnss: Optional[np.ndarray] = None,
    rotation_body_from_radar: Optional[np.ndarray] = None,
    enu_origin: Optional[GeodeticPoint] = None,
) -> InitializationResult:
    """Build the first NavState.

    Position and clock come from single point positioning, velocity and yaw
    from differencing the fixes, roll and pitch from gravity alignment of
    the first second of accelerometer data.

    Args:
        first_epochs (Sequence[GnssEpoch]): two or three consecutive epochs
        imu_buffer (Sequence[ImuSample]): IMU samples starting at the first epoch
        lever_arm_gnss (Optional[np.ndarray]): antenna offset in the body frame
        rotation_body_from_radar (Optional[np.ndarray]): radar extrinsic
        enu_origin (Optional[GeodeticPoint]): fixed ENU origin, the first fix when omitted

    Returns:
        InitializationResult: state at the first epoch and the ENU frames

    Raises:
        InitializationDeferred: If an epoch has fewer than four satellites or
            the GNSS/IMU data span is too short
    """
    if len(first_epochs) < 2:
        raise InitializationDeferred("Initialization needs two GNSS epochs")
    t0 = first_epochs[0].timestamp
    samples = [s for s in imu_buffer if s.timestamp >= t0 - 1e-9]
    if not samples or samples[-1].timestamp - samples[0].timestamp < MIN_IMU_SPAN - 1e-9:
        raise InitializationDeferred(f"Initialization needs {MIN_IMU_SPAN} s of IMU data")

    fixes: List[SppSolution] = []
    previous = None
    for epoch in first_epochs[:3]:
        fix = solve_spp(epoch, initial_position=previous)
        fixes.append(fix)
        previous = fix.position_ecef

    lever = np.zeros(3) if lever_arm_gnss is None else np.asarray(lever_arm_gnss, dtype=float)
    origin = enu_origin or ecef_to_geodetic(fixes[0].position_ecef)
    frames = FrameSet.from_origin(origin, lever, rotation_body_from_radar)

    times = np.array([e.timestamp for e in first_epochs[: len(fixes)]])
    antenna_enu = np.array([ecef_to_enu(f.position_ecef, frames) for f in fixes])
    velocity, acceleration = _velocity_and_acceleration(times, antenna_enu)

    speed = float(np.hypot(velocity[0], velocity[1]))
    if speed >= MIN_HEADING_SPEED:
        yaw = math.atan2(velocity[1], velocity[0])
    else:
        logger.warning("Platform too slow (%.2f m/s) for a heading fix; yaw set to 0", speed)
        yaw = 0.0

    window = [s.accel for s in samples if s.timestamp <= samples[0].timestamp + MIN_IMU_SPAN]
    mean_force = np.mean(window, axis=0)
    # remove the motion acceleration seen in the heading frame
    heading = quat_to_matrix(quat_from_euler(0.0, 0.0, yaw))
    roll, pitch = _roll_pitch(mean_force - heading.T @ acceleration)
    orientation = quat_from_euler(roll, pitch, yaw)

    position = antenna_enu[0] - quat_to_matrix(orientation) @ lever
    clocks = np.array([f.clock_bias for f in fixes])
    drift = float((clocks[1] - clocks[0]) / (times[1] - times[0]))
    state = NavState(
        timestamp=t0,
        position=position,
        velocity=velocity,
        orientation=orientation,
        clock_bias=clocks[0],
        clock_drift=drift,
    )
    logger.info(
        "Initialized at t=%.3f: origin lat %.6f lon %.6f, yaw %.1f deg, GDOP %.2f",
        t0, math.degrees(origin.latitude), math.degrees(origin.longitude),
        math.degrees(yaw), fixes[0].gdop,
    )
    return InitializationResult(state, frames, tuple(fixes))
