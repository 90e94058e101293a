"""Sliding-window problem: states, factors and marginalization."""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.backend.factors import (
    ClockDriftFactor,
    Factor,
    ImuFactor,
    MarginalizationFactor,
    PriorFactor,
    PseudorangeFactor,
    RadarVelocityFactor,
    TdcpFactor,
)
from core.backend.state import STATE_DIM, NavState
from core.errors import EstimationError
from core.geodesy.frames import FrameSet
from core.gnss.measurement_models import DEFAULT_ELEVATION_MASK, elevation_filter, receiver_position_ecef
from core.gnss.observations import GnssEpoch, TdcpMeasurement
from core.interface.noise_model import ScalarNoiseModel
from core.preintegration.imu_preintegration import DEFAULT_GRAVITY, PreintegratedImu, predict_state
from core.radar.velocity_preintegration import PreintegratedRadarVelocity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FactorSettings:
    """Noise and gating settings used when building factors.

    Attributes:
        clock_bias_sigma (float): clock bias propagation noise [m]
        clock_drift_sigma (float): clock drift propagation noise [m/s]
        tdcp_sigma (float): TDCP noise [m]
        elevation_mask (float): pseudorange elevation mask [rad]
        enable_radar (bool): add radar velocity factors
        enable_tdcp (bool): add TDCP factors
    """

    clock_bias_sigma: float = 0.3
    clock_drift_sigma: float = 0.05
    tdcp_sigma: float = 0.02
    elevation_mask: float = DEFAULT_ELEVATION_MASK
    enable_radar: bool = True
    enable_tdcp: bool = True


@dataclass
class RobustModels:
    """Outputs of the robustification stage for one epoch.

    Attributes:
        pseudorange_noise (ScalarNoiseModel): noise model for this epoch's pseudoranges
        tdcp (List[TdcpMeasurement]): screened TDCP candidates against the previous epoch
        previous_epoch (Optional[GnssEpoch]): epoch the TDCP candidates difference against
    """

    pseudorange_noise: ScalarNoiseModel
    tdcp: List[TdcpMeasurement] = field(default_factory=list)
    previous_epoch: Optional[GnssEpoch] = None


class Problem:
    """Sliding window of NavStates and the factors between them."""

    def __init__(
        self,
        frames: FrameSet,
        capacity: int = 10,
        gravity: np.ndarray = DEFAULT_GRAVITY,
        settings: Optional[FactorSettings] = None,
    ):
        """Initialize an empty window.

        Args:
            frames (FrameSet): ENU origin, lever arm and radar extrinsic
            capacity (int): window size L
            gravity (np.ndarray): gravity vector in ENU
            settings (Optional[FactorSettings]): factor construction settings
        """
        if capacity < 2:
            raise ValueError(f"Window capacity must be at least 2, got {capacity}")
        self.frames = frames
        self.capacity = capacity
        self.gravity = np.asarray(gravity, dtype=float)
        self.settings = settings or FactorSettings()
        self.states: List[NavState] = []
        self.factors: List[Factor] = []

    def __len__(self) -> int:
        return len(self.states)

    @property
    def is_full(self) -> bool:
        return len(self.states) >= self.capacity

    @property
    def keys(self) -> Tuple[float, ...]:
        return tuple(s.timestamp for s in self.states)

    def index_of(self, key: float) -> int:
        for i, s in enumerate(self.states):
            if s.timestamp == key:
                return i
        raise KeyError(f"No state at t={key} in the window")

    def states_for(self, factor: Factor) -> List[NavState]:
        return [self.states[self.index_of(k)] for k in factor.keys]

    def add_state(self, state: NavState) -> None:
        if self.states and state.timestamp <= self.states[-1].timestamp:
            raise EstimationError(
                f"State at t={state.timestamp} is not newer than t={self.states[-1].timestamp}"
            )
        self.states.append(state)

    def add_factor(self, factor: Factor) -> None:
        window = set(self.keys)
        missing = [k for k in factor.keys if k not in window]
        if missing:
            raise EstimationError(f"{factor.describe()} references states outside the window: {missing}")
        self.factors.append(factor)

    def set_states(self, states: Sequence[NavState]) -> None:
        if [s.timestamp for s in states] != list(self.keys):
            raise EstimationError("Replacement states do not match the window")
        self.states = list(states)

    def factor_counts(self) -> Dict[str, int]:
        return dict(Counter(f.kind for f in self.factors))

    def total_cost(self, states: Optional[Sequence[NavState]] = None) -> float:
        states = self.states if states is None else states
        lookup = {s.timestamp: s for s in states}
        return sum(f.cost([lookup[k] for k in f.keys]) for f in self.factors)

    def add_prior(self, state: NavState, sigmas: np.ndarray) -> None:
        self.add_factor(PriorFactor(state, sigmas))

    def marginalize_oldest(self) -> NavState:
        """Fold the oldest state into a linear prior on its neighbours.

        Returns:
            NavState: the removed state
        """
        if not self.states:
            raise EstimationError("Cannot marginalize from an empty window")
        oldest = self.states[0]
        key = oldest.timestamp
        touching = [f for f in self.factors if key in f.keys]
        remaining_factors = [f for f in self.factors if key not in f.keys]
        kept_keys = sorted({k for f in touching for k in f.keys if k != key})

        if kept_keys and touching:
            prior = marginalize(
                touching,
                oldest,
                [self.states[self.index_of(k)] for k in kept_keys],
            )
            if prior is not None:
                remaining_factors.append(prior)
        self.states = self.states[1:]
        self.factors = remaining_factors
        logger.debug("Marginalized state t=%.3f (%d factors)", key, len(touching))
        return oldest


def _accumulate(factors: Sequence[Factor], ordered: Sequence[NavState]):
    index = {s.timestamp: i for i, s in enumerate(ordered)}
    n = STATE_DIM * len(ordered)
    H = np.zeros((n, n))
    g = np.zeros(n)
    for f in factors:
        r, blocks = f.linearize([ordered[index[k]] for k in f.keys])
        J = np.zeros((len(r), n))
        for k, block in zip(f.keys, blocks):
            i = index[k] * STATE_DIM
            J[:, i:i + STATE_DIM] += block
        H += J.T @ J
        g += J.T @ r
    return H, g


def marginalize(
    factors: Sequence[Factor], marginalized: NavState, kept: Sequence[NavState]
) -> Optional[MarginalizationFactor]:
    """Schur-complement ``marginalized`` out of the linearized ``factors``.

    Returns:
        Optional[MarginalizationFactor]: None when no information remains
    """
    H, g = _accumulate(factors, [marginalized, *kept])
    m = STATE_DIM
    H_mm, H_mr, H_rr = H[:m, :m], H[:m, m:], H[m:, m:]
    H_mm_inv = linalg.pinvh(H_mm)
    H_prior = H_rr - H_mr.T @ H_mm_inv @ H_mr
    g_prior = g[m:] - H_mr.T @ H_mm_inv @ g[:m]

    values, vectors = linalg.eigh(0.5 * (H_prior + H_prior.T))
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if np.any(values < -1e-9 * scale):
        logger.warning(
            "Marginalization prior lost positive semi-definiteness (min eigenvalue %.3e); clamping",
            float(values.min()),
        )
    keep = values > 1e-12 * scale
    if not np.any(keep):
        return None
    values, vectors = values[keep], vectors[:, keep]
    jacobian = np.sqrt(values)[:, None] * vectors.T
    residual = (vectors.T @ g_prior) / np.sqrt(values)
    return MarginalizationFactor(kept, jacobian, residual)


def add_epoch(
    problem: Problem,
    preint_imu: PreintegratedImu,
    preint_radar: Optional[PreintegratedRadarVelocity],
    gnss_epoch: GnssEpoch,
    robust_models: RobustModels,
) -> Problem:
    """Append the state of a new GNSS epoch and all factors that reach it.

    Args:
        problem (Problem): window holding at least one state
        preint_imu (PreintegratedImu): IMU terms since the newest state
        preint_radar (Optional[PreintegratedRadarVelocity]): radar terms, None when unavailable
        gnss_epoch (GnssEpoch): observations at the new state
        robust_models (RobustModels): pseudorange noise and screened TDCP

    Returns:
        Problem: the same problem, extended

    Raises:
        EstimationError: If the window is empty
    """
    if not problem.states:
        raise EstimationError("Cannot add an epoch before initialization")
    previous = problem.states[-1]
    predicted = predict_state(preint_imu, previous, problem.gravity).replace(
        timestamp=gnss_epoch.timestamp
    )
    problem.add_state(predicted)
    keys = (previous.timestamp, predicted.timestamp)
    settings = problem.settings

    problem.add_factor(ImuFactor(keys, preint_imu, problem.gravity))
    problem.add_factor(ClockDriftFactor(keys, settings.clock_bias_sigma, settings.clock_drift_sigma))
    if settings.enable_radar and preint_radar is not None:
        problem.add_factor(RadarVelocityFactor(keys, preint_radar))

    visible = elevation_filter(
        gnss_epoch, receiver_position_ecef(predicted, problem.frames), settings.elevation_mask
    )
    for sat_id in visible.sat_ids:
        problem.add_factor(
            PseudorangeFactor(
                predicted.timestamp,
                visible.observations[sat_id],
                visible.sat_states[sat_id],
                problem.frames,
                robust_models.pseudorange_noise,
            )
        )

    if settings.enable_tdcp and robust_models.previous_epoch is not None:
        prev_epoch = robust_models.previous_epoch
        for m in robust_models.tdcp:
            if m.accepted is not True or m.sat_id not in visible.observations:
                continue
            if m.epoch_pair != keys:
                continue
            sats = (prev_epoch.sat_states[m.sat_id], gnss_epoch.sat_states[m.sat_id])
            problem.add_factor(TdcpFactor(m, sats, problem.frames, settings.tdcp_sigma))
    return problem
