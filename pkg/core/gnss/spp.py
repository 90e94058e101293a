"""Single point positioning from pseudoranges (Gauss-Newton)."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from core.errors import InitializationDeferred
from core.geodesy.frames import sagnac_gradient
from core.gnss.measurement_models import predicted_pseudorange
from core.gnss.observations import GnssEpoch

logger = logging.getLogger(__name__)

MIN_SATELLITES = 4


@dataclass(frozen=True, eq=False)
class SppSolution:
    """Receiver fix.

    Attributes:
        position_ecef (np.ndarray): antenna position [m]
        clock_bias (float): receiver clock bias [m]
        covariance (np.ndarray): 4x4 over (x, y, z, clock), scaled by sigma^2
        gdop (float): geometric dilution of precision
        pdop (float): position dilution of precision
        iterations (int): Gauss-Newton iterations used
        residuals (np.ndarray): post-fit pseudorange residuals [m]
        sat_ids (Tuple[str, ...]): satellites used
    """

    position_ecef: np.ndarray
    clock_bias: float
    covariance: np.ndarray
    gdop: float
    pdop: float
    iterations: int
    residuals: np.ndarray
    sat_ids: Tuple[str, ...]


def _design(epoch: GnssEpoch, position: np.ndarray, clock: float):
    H = np.zeros((len(epoch), 4))
    r = np.zeros(len(epoch))
    for i, sat_id in enumerate(epoch.sat_ids):
        sat = epoch.sat_states[sat_id]
        r[i] = predicted_pseudorange(sat, position, clock) - epoch.observations[sat_id].pseudorange
        los = sat.position_ecef - position
        H[i, :3] = -los / np.linalg.norm(los) + sagnac_gradient(sat.position_ecef)
        H[i, 3] = 1.0
    return H, r


def solve_spp(
    epoch: GnssEpoch,
    initial_position: Optional[np.ndarray] = None,
    sigma: float = 1.0,
    max_iterations: int = 20,
    tolerance: float = 1e-9,
) -> SppSolution:
    """Solve receiver position and clock from one epoch.

    Args:
        epoch (GnssEpoch): observations with satellite states
        initial_position (Optional[np.ndarray]): linearization start, Earth center by default
        sigma (float): pseudorange standard deviation for the covariance [m]
        max_iterations (int): Gauss-Newton iteration limit
        tolerance (float): step norm that ends the iteration [m]

    Returns:
        SppSolution: the fix; degenerate geometry yields an infinite covariance

    Raises:
        InitializationDeferred: If fewer than four satellites are available
    """
    if len(epoch) < MIN_SATELLITES:
        raise InitializationDeferred(
            f"SPP at t={epoch.timestamp} needs {MIN_SATELLITES} satellites, got {len(epoch)}"
        )
    position = np.zeros(3) if initial_position is None else np.array(initial_position, dtype=float)
    clock = 0.0
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        H, r = _design(epoch, position, clock)
        step, *_ = linalg.lstsq(H, -r)
        position = position + step[:3]
        clock += step[3]
        if np.linalg.norm(step) < tolerance:
            break

    H, r = _design(epoch, position, clock)
    normal = H.T @ H
    if np.linalg.matrix_rank(normal) < 4:
        logger.warning("Degenerate SPP geometry at t=%.3f", epoch.timestamp)
        dop_matrix = np.full((4, 4), np.inf)
    else:
        dop_matrix = linalg.inv(normal)
    gdop = float(np.sqrt(np.trace(dop_matrix)))
    pdop = float(np.sqrt(np.trace(dop_matrix[:3, :3])))
    logger.debug("SPP t=%.3f converged in %d iterations, GDOP %.2f", epoch.timestamp, iterations, gdop)
    return SppSolution(
        position_ecef=position,
        clock_bias=float(clock),
        covariance=sigma ** 2 * dop_matrix,
        gdop=gdop,
        pdop=pdop,
        iterations=iterations,
        residuals=r,
        sat_ids=epoch.sat_ids,
    )
