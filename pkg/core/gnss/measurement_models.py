"""Pseudorange, TDCP and receiver-clock models with their residuals.

All residuals accept ``with_jacobians=True`` and then also return Jacobians
with respect to the 17-dimensional local increment of every involved state.
"""
import logging
import math
from typing import List, Tuple

import numpy as np

from core.backend.state import CLK, DRIFT, POS, ROT, STATE_DIM, NavState
from core.errors import MeasurementError
from core.geodesy.frames import FrameSet, elevation_azimuth, sagnac_correction, sagnac_gradient
from core.geodesy.rotation import skew
from core.gnss.observations import (
    GnssEpoch,
    SatelliteObservation,
    SatelliteState,
    TdcpMeasurement,
)

logger = logging.getLogger(__name__)

DEFAULT_ELEVATION_MASK = math.radians(15.0)


def receiver_position_ecef(x: NavState, frames: FrameSet) -> np.ndarray:
    """Antenna position in ECEF: origin + R_en (p + R l)."""
    antenna_enu = x.position + x.rotation @ frames.lever_arm_gnss
    return frames.origin_ecef + frames.rotation_ecef_from_enu @ antenna_enu


def _antenna_jacobian(x: NavState, frames: FrameSet, row: np.ndarray) -> np.ndarray:
    """Chain a 1x3 ECEF gradient through the antenna position to a 1x17 row."""
    J = np.zeros(STATE_DIM)
    J[POS] = row @ frames.rotation_ecef_from_enu
    J[ROT] = -row @ frames.rotation_ecef_from_enu @ x.rotation @ skew(frames.lever_arm_gnss)
    return J


def elevation_filter(
    epoch: GnssEpoch,
    receiver_ecef: np.ndarray,
    mask: float = DEFAULT_ELEVATION_MASK,
) -> GnssEpoch:
    """Drop satellites observed below the elevation mask."""
    keep = []
    for sat_id in epoch.sat_ids:
        elevation, _ = elevation_azimuth(epoch.sat_states[sat_id].position_ecef, receiver_ecef)
        if elevation >= mask:
            keep.append(sat_id)
        else:
            logger.debug(
                "Satellite %s below the elevation mask (%.1f deg)", sat_id, math.degrees(elevation)
            )
    return epoch.subset(keep)


def predicted_pseudorange(sat: SatelliteState, receiver_ecef: np.ndarray, clock_bias: float) -> float:
    """Forward pseudorange model without noise."""
    return float(
        np.linalg.norm(sat.position_ecef - receiver_ecef)
        + clock_bias
        - sat.clock_error
        + sat.tropo_delay
        + sat.iono_delay
        + sagnac_correction(sat.position_ecef, receiver_ecef)
    )


def pseudorange_residual(
    obs: SatelliteObservation,
    sat: SatelliteState,
    x_k: NavState,
    frames: FrameSet,
    with_jacobians: bool = False,
):
    """Predicted minus measured pseudorange [m].

    Args:
        obs (SatelliteObservation): measured pseudorange
        sat (SatelliteState): satellite position and corrections
        x_k (NavState): receiver state
        frames (FrameSet): ENU origin and lever arm
        with_jacobians (bool): also return the 17-element Jacobian row

    Returns:
        float or (float, np.ndarray)
    """
    p_r = receiver_position_ecef(x_k, frames)
    r = predicted_pseudorange(sat, p_r, x_k.clock_bias) - obs.pseudorange
    if not with_jacobians:
        return r
    los = sat.position_ecef - p_r
    unit = los / np.linalg.norm(los)
    J = _antenna_jacobian(x_k, frames, -unit + sagnac_gradient(sat.position_ecef))
    J[CLK] = 1.0
    return r, J


def build_tdcp(epoch_k: GnssEpoch, epoch_k1: GnssEpoch) -> List[TdcpMeasurement]:
    """One TDCP candidate per satellite observed at both epochs.

    The measurement also records the change of the satellite clock and
    atmospheric terms, so the residual stays exact when they vary.
    """
    pair = (epoch_k.timestamp, epoch_k1.timestamp)
    measurements = []
    for sat_id in sorted(set(epoch_k.observations) & set(epoch_k1.observations)):
        o0, o1 = epoch_k.observations[sat_id], epoch_k1.observations[sat_id]
        s0, s1 = epoch_k.sat_states[sat_id], epoch_k1.sat_states[sat_id]
        correction_delta = (
            -(s1.clock_error - s0.clock_error)
            + (s1.tropo_delay - s0.tropo_delay)
            - (s1.iono_delay - s0.iono_delay)
        )
        measurements.append(
            TdcpMeasurement(
                sat_id=sat_id,
                epoch_pair=pair,
                delta_phase=o1.wavelength * (o1.carrier_phase - o0.carrier_phase),
                correction_delta=correction_delta,
            )
        )
    return measurements


def tdcp_residual(
    m: TdcpMeasurement,
    sats: Tuple[SatelliteState, SatelliteState],
    x_k: NavState,
    x_k1: NavState,
    frames: FrameSet,
    with_jacobians: bool = False,
):
    """Predicted minus measured phase difference [m].

    Raises:
        MeasurementError: If the measurement has not passed the cycle-slip check
    """
    if m.accepted is not True:
        raise MeasurementError(f"TDCP of {m.sat_id} at {m.epoch_pair} is not accepted")
    sat_k, sat_k1 = sats
    p_r0 = receiver_position_ecef(x_k, frames)
    p_r1 = receiver_position_ecef(x_k1, frames)
    los0 = sat_k.position_ecef - p_r0
    los1 = sat_k1.position_ecef - p_r1
    range0 = np.linalg.norm(los0)
    range1 = np.linalg.norm(los1)
    r = float(
        range1 - range0 + x_k1.clock_bias - x_k.clock_bias + m.correction_delta - m.delta_phase
    )
    if not with_jacobians:
        return r
    J0 = _antenna_jacobian(x_k, frames, los0 / range0)
    J1 = _antenna_jacobian(x_k1, frames, -los1 / range1)
    J0[CLK] = -1.0
    J1[CLK] = 1.0
    return r, (J0, J1)


def clock_drift_residual(x_k: NavState, x_k1: NavState, dt: float, with_jacobians: bool = False):
    """Constant-drift receiver clock model residual (bias, drift)."""
    if not dt > 0.0:
        raise MeasurementError(f"Clock drift interval must be positive, got {dt}")
    r = np.array([
        x_k.clock_bias + x_k.clock_drift * dt - x_k1.clock_bias,
        x_k.clock_drift - x_k1.clock_drift,
    ])
    if not with_jacobians:
        return r
    J0 = np.zeros((2, STATE_DIM))
    J1 = np.zeros((2, STATE_DIM))
    J0[0, CLK] = 1.0
    J0[0, DRIFT] = dt
    J0[1, DRIFT] = 1.0
    J1[0, CLK] = -1.0
    J1[1, DRIFT] = -1.0
    return r, (J0, J1)
