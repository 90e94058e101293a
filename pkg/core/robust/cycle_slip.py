"""Carrier-phase cycle-slip detection by Doppler integration."""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional

from core.errors import MeasurementError
from core.gnss.observations import GnssEpoch, TdcpMeasurement

logger = logging.getLogger(__name__)

DEFAULT_SLIP_THRESHOLD = 0.05


@dataclass(frozen=True)
class CycleSlipCheck:
    """Outcome of one slip test.

    Attributes:
        epsilon (float): |phase change - integrated Doppler| [m]
        threshold (float): rejection threshold [m]
        passed (bool): epsilon < threshold
    """

    epsilon: float
    threshold: float
    passed: bool


def detect_cycle_slip(
    phi_k: float,
    phi_k1: float,
    doppler_k: Optional[float],
    doppler_k1: Optional[float],
    wavelength: float,
    dt: float,
    threshold: float = DEFAULT_SLIP_THRESHOLD,
    doppler_sign: int = 1,
) -> CycleSlipCheck:
    """Compare the phase change with the trapezoidal integral of Doppler.

    Args:
        phi_k (float): phase at the first epoch [cycles]
        phi_k1 (float): phase at the second epoch [cycles]
        doppler_k (Optional[float]): Doppler at the first epoch [Hz]
        doppler_k1 (Optional[float]): Doppler at the second epoch [Hz]
        wavelength (float): carrier wavelength [m]
        dt (float): epoch spacing [s]
        threshold (float): rejection threshold [m]
        doppler_sign (int): +1 when phase grows with positive Doppler, -1 otherwise

    Returns:
        CycleSlipCheck: fails closed when either Doppler value is missing

    Raises:
        MeasurementError: If ``dt`` is not positive
    """
    if not dt > 0.0:
        raise MeasurementError(f"Cycle-slip check needs a positive interval, got {dt}")
    if doppler_k is None or doppler_k1 is None or not (
        math.isfinite(doppler_k) and math.isfinite(doppler_k1)
    ):
        return CycleSlipCheck(math.inf, threshold, False)
    delta_phase = wavelength * (phi_k1 - phi_k)
    integrated = doppler_sign * wavelength * 0.5 * (doppler_k + doppler_k1) * dt
    epsilon = abs(delta_phase - integrated)
    return CycleSlipCheck(epsilon, threshold, epsilon < threshold)


def screen_tdcp(
    measurements: List[TdcpMeasurement],
    epoch_k: GnssEpoch,
    epoch_k1: GnssEpoch,
    threshold: float = DEFAULT_SLIP_THRESHOLD,
    doppler_sign: int = 1,
) -> List[TdcpMeasurement]:
    """Set ``accepted`` and ``epsilon`` on every TDCP candidate of an epoch pair."""
    dt = epoch_k1.timestamp - epoch_k.timestamp
    screened = []
    for m in measurements:
        o0 = epoch_k.observations[m.sat_id]
        o1 = epoch_k1.observations[m.sat_id]
        check = detect_cycle_slip(
            o0.carrier_phase,
            o1.carrier_phase,
            o0.doppler,
            o1.doppler,
            o1.wavelength,
            dt,
            threshold,
            doppler_sign,
        )
        if not check.passed:
            logger.info(
                "TDCP of %s rejected at t=%.3f (epsilon %.3f m)", m.sat_id, epoch_k1.timestamp, check.epsilon
            )
        screened.append(replace(m, accepted=check.passed, epsilon=check.epsilon))
    return screened
