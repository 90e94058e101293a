"""Ego-velocity estimation from a single 4D-radar Doppler scan.

Static targets satisfy ``doppler = d . v_ego`` with ``d`` the unit direction
of the point in the radar frame. Only the horizontal direction cosines are
used, so the solve is a 2D linear problem; RANSAC over two-point minimal
samples separates static points from moving targets.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.errors import MeasurementError

logger = logging.getLogger(__name__)

MIN_RANGE = 0.5


@dataclass(frozen=True, eq=False)
class RadarPoint:
    """One radar detection.

    Attributes:
        position (np.ndarray): point in the radar frame [m]
        doppler (float): relative radial speed [m/s]
    """

    position: np.ndarray
    doppler: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "doppler", float(self.doppler))
        if not np.isfinite(self.doppler) or not np.all(np.isfinite(pos)):
            raise MeasurementError("Radar point must be finite")
        if np.linalg.norm(pos) <= MIN_RANGE:
            raise MeasurementError(f"Radar point inside the {MIN_RANGE} m range gate")


@dataclass(frozen=True)
class RadarScan:
    """Timestamped radar point cloud."""

    timestamp: float
    points: Tuple[RadarPoint, ...] = ()

    @classmethod
    def from_arrays(cls, timestamp: float, positions, dopplers) -> "RadarScan":
        """Build a scan, silently dropping detections inside the range gate."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        dopplers = np.asarray(dopplers, dtype=float).reshape(-1)
        keep = np.linalg.norm(positions, axis=1) > MIN_RANGE
        if not np.all(keep):
            logger.debug("Dropped %d radar points inside the range gate", int(np.sum(~keep)))
        return cls(
            float(timestamp),
            tuple(RadarPoint(p, d) for p, d in zip(positions[keep], dopplers[keep])),
        )

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RansacParams:
    """RANSAC settings for ego-velocity estimation.

    Attributes:
        min_points (int): minimum scan size and inlier count
        inlier_threshold (float): consensus gate on the Doppler residual [m/s]
        iterations (int): maximum number of minimal samples
        early_exit_fraction (float): stop once this share of points agrees
        min_consensus_fraction (float): below this the estimate is invalid
        seed (int): seed of the sampling generator
    """

    min_points: int = 8
    inlier_threshold: float = 0.25
    iterations: int = 100
    early_exit_fraction: float = 0.95
    min_consensus_fraction: float = 0.4
    seed: int = 0


@dataclass(frozen=True, eq=False)
class EgoVelocityEstimate:
    """Result of :func:`estimate_ego_velocity`."""

    v2d_radar: np.ndarray
    body_velocity: np.ndarray
    inlier_indices: Tuple[int, ...] = ()
    residual_rms: float = float("nan")
    valid: bool = False

    @classmethod
    def invalid(cls) -> "EgoVelocityEstimate":
        return cls(np.zeros(2), np.zeros(3))


def _direction_cosines(positions: np.ndarray) -> np.ndarray:
    return positions[:, :2] / np.linalg.norm(positions, axis=1, keepdims=True)


def estimate_ego_velocity(
    scan: Iterable[RadarPoint],
    config: Optional[RansacParams] = None,
    rotation_body_from_radar: Optional[np.ndarray] = None,
) -> EgoVelocityEstimate:
    """Estimate the longitudinal body velocity from one scan.

    Args:
        scan (Iterable[RadarPoint]): detections (a RadarScan or any point collection)
        config (Optional[RansacParams]): RANSAC settings
        rotation_body_from_radar (Optional[np.ndarray]): radar-to-body rotation

    Returns:
        EgoVelocityEstimate: ``valid`` is False when the scan is too small or
        the consensus share is below the configured minimum
    """
    config = config or RansacParams()
    points: Sequence[RadarPoint] = scan.points if isinstance(scan, RadarScan) else list(scan)
    n = len(points)
    if n < max(config.min_points, 2):
        logger.debug("Radar scan with %d points is below the minimum of %d", n, config.min_points)
        return EgoVelocityEstimate.invalid()

    positions = np.array([p.position for p in points])
    doppler = np.array([p.doppler for p in points])
    # canonical order makes the result independent of the input ordering
    order = np.lexsort((doppler, positions[:, 2], positions[:, 1], positions[:, 0]))
    D = _direction_cosines(positions[order])
    b = doppler[order]

    rng = np.random.default_rng(config.seed)
    best_mask = np.zeros(n, dtype=bool)
    best_count = 0
    best_error = np.inf
    for _ in range(config.iterations):
        i, j = rng.choice(n, size=2, replace=False)
        M = D[[i, j]]
        if abs(np.linalg.det(M)) < 1e-6:
            continue
        v = np.linalg.solve(M, b[[i, j]])
        errors = np.abs(D @ v - b)
        mask = errors < config.inlier_threshold
        count = int(mask.sum())
        error = float(errors[mask].sum())
        if count > best_count or (count == best_count and error < best_error):
            best_mask, best_count, best_error = mask, count, error
            if best_count >= config.early_exit_fraction * n:
                break

    if best_count < 2:
        return EgoVelocityEstimate.invalid()

    v2d, *_ = np.linalg.lstsq(D[best_mask], b[best_mask], rcond=None)
    residuals = D[best_mask] @ v2d - b[best_mask]
    residual_rms = float(np.sqrt(np.mean(residuals ** 2)))
    valid = best_count >= config.min_points and best_count >= config.min_consensus_fraction * n

    R_rb = np.eye(3) if rotation_body_from_radar is None else np.asarray(rotation_body_from_radar)
    v_body = R_rb @ np.array([v2d[0], v2d[1], 0.0])
    body_velocity = np.array([v_body[0], 0.0, 0.0])
    inliers = tuple(sorted(int(k) for k in order[best_mask]))
    if not valid:
        logger.info(
            "Radar ego-velocity rejected: %d/%d points in consensus", best_count, n
        )
    return EgoVelocityEstimate(v2d, body_velocity, inliers, residual_rms, bool(valid))
