"""Typed factors of the sliding-window graph.

Every factor references its states by timestamp and returns a whitened
residual together with whitened Jacobians (one block of width STATE_DIM per
referenced state), so that its cost is half the squared norm of the
whitened residual.
"""
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.backend.state import ROT, STATE_DIM, NavState
from core.geodesy.frames import FrameSet
from core.geodesy.rotation import right_jacobian_inv
from core.gnss.measurement_models import clock_drift_residual, pseudorange_residual, tdcp_residual
from core.gnss.observations import SatelliteObservation, SatelliteState, TdcpMeasurement
from core.interface.noise_model import ScalarNoiseModel
from core.preintegration.imu_preintegration import DEFAULT_GRAVITY, PreintegratedImu, imu_residual
from core.radar.velocity_preintegration import PreintegratedRadarVelocity, velocity_residual

INFORMATION_FLOOR = 1e-18


def sqrt_information(covariance: np.ndarray) -> np.ndarray:
    """Matrix L with L^T L equal to the inverse of ``covariance``."""
    covariance = 0.5 * (covariance + covariance.T)
    values, vectors = linalg.eigh(covariance)
    values = np.maximum(values, INFORMATION_FLOOR)
    return (vectors / np.sqrt(values)).T


def box_minus_jacobian(delta: np.ndarray) -> np.ndarray:
    """Derivative of ``x.box_plus(d).box_minus(x_ref)`` w.r.t. d, at the current x."""
    J = np.eye(STATE_DIM)
    J[ROT, ROT] = right_jacobian_inv(delta[ROT])
    return J


class Factor(ABC):
    """Abstract base class for all graph factors."""

    kind: str = "abstract"

    def __init__(self, keys: Sequence[float]):
        self.keys: Tuple[float, ...] = tuple(float(k) for k in keys)

    @abstractmethod
    def linearize(self, states: Sequence[NavState]) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Whitened residual and Jacobians at ``states``.

        Args:
            states (Sequence[NavState]): one state per key, in key order

        Returns:
            Tuple[np.ndarray, List[np.ndarray]]: residual (m,) and one (m, 17) block per key
        """
        pass

    def whitened_residual(self, states: Sequence[NavState]) -> np.ndarray:
        return self.linearize(states)[0]

    def cost(self, states: Sequence[NavState]) -> float:
        r = self.whitened_residual(states)
        return 0.5 * float(r @ r)

    def describe(self) -> str:
        return f"{self.kind} factor on {self.keys}"


class GaussianFactor(Factor):
    """Factor with a raw residual whitened by a fixed square-root information."""

    def __init__(self, keys: Sequence[float], covariance: np.ndarray):
        super().__init__(keys)
        self.sqrt_info = sqrt_information(np.atleast_2d(covariance))

    @abstractmethod
    def raw(self, states: Sequence[NavState]) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Unwhitened residual and Jacobians."""
        pass

    def linearize(self, states):
        r, jacobians = self.raw(states)
        return self.sqrt_info @ np.atleast_1d(r), [self.sqrt_info @ np.atleast_2d(J) for J in jacobians]

    def whitened_residual(self, states):
        r, _ = self.raw(states)
        return self.sqrt_info @ np.atleast_1d(r)


class PriorFactor(GaussianFactor):
    """Unary Gaussian prior on a full state."""

    kind = "prior"

    def __init__(self, anchor: NavState, sigmas: np.ndarray):
        sigmas = np.asarray(sigmas, dtype=float).reshape(STATE_DIM)
        super().__init__([anchor.timestamp], np.diag(sigmas ** 2))
        self.anchor = anchor

    def raw(self, states):
        r = states[0].box_minus(self.anchor)
        return r, [box_minus_jacobian(r)]


class ImuFactor(GaussianFactor):
    """Preintegrated IMU constraint between consecutive states."""

    kind = "imu"

    def __init__(self, keys, preintegrated: PreintegratedImu, gravity: np.ndarray = DEFAULT_GRAVITY):
        super().__init__(keys, preintegrated.covariance)
        self.preintegrated = preintegrated
        self.gravity = np.asarray(gravity, dtype=float)

    def raw(self, states):
        r, (J0, J1) = imu_residual(self.preintegrated, states[0], states[1], self.gravity, True)
        return r, [J0, J1]


class RadarVelocityFactor(GaussianFactor):
    """Relative position constraint from integrated radar ego-velocity."""

    kind = "radar_velocity"

    def __init__(self, keys, preintegrated: PreintegratedRadarVelocity):
        super().__init__(keys, preintegrated.covariance)
        self.preintegrated = preintegrated

    def raw(self, states):
        r, (J0, J1) = velocity_residual(self.preintegrated, states[0], states[1], True)
        return r, [J0, J1]


class ClockDriftFactor(GaussianFactor):
    """Constant clock drift between consecutive states."""

    kind = "clock_drift"

    def __init__(self, keys, bias_sigma: float = 0.3, drift_sigma: float = 0.05):
        super().__init__(keys, np.diag([bias_sigma ** 2, drift_sigma ** 2]))
        self.dt = self.keys[1] - self.keys[0]

    def raw(self, states):
        r, (J0, J1) = clock_drift_residual(states[0], states[1], self.dt, True)
        return r, [J0, J1]


class TdcpFactor(GaussianFactor):
    """Time-differenced carrier phase of one satellite."""

    kind = "tdcp"

    def __init__(
        self,
        measurement: TdcpMeasurement,
        sats: Tuple[SatelliteState, SatelliteState],
        frames: FrameSet,
        sigma: float = 0.02,
    ):
        super().__init__(measurement.epoch_pair, np.array([[sigma ** 2]]))
        self.measurement = measurement
        self.sats = sats
        self.frames = frames

    def raw(self, states):
        r, (J0, J1) = tdcp_residual(self.measurement, self.sats, states[0], states[1], self.frames, True)
        return np.array([r]), [J0, J1]


class PseudorangeFactor(Factor):
    """Pseudorange of one satellite under a scalar, possibly non-Gaussian, noise model."""

    kind = "pseudorange"

    def __init__(
        self,
        timestamp: float,
        observation: SatelliteObservation,
        sat: SatelliteState,
        frames: FrameSet,
        noise: ScalarNoiseModel,
    ):
        super().__init__([timestamp])
        self.observation = observation
        self.sat = sat
        self.frames = frames
        self.noise = noise

    def residual(self, state: NavState) -> float:
        return pseudorange_residual(self.observation, self.sat, state, self.frames)

    def linearize(self, states):
        r, J = pseudorange_residual(self.observation, self.sat, states[0], self.frames, True)
        s, ds_dr = self.noise.whiten(r)
        return np.array([s]), [ds_dr * J[None, :]]

    def whitened_residual(self, states):
        s, _ = self.noise.whiten(self.residual(states[0]))
        return np.array([s])


class MarginalizationFactor(Factor):
    """Linear prior left behind by marginalizing a state.

    The residual is ``J (x boxminus x_lin) + e`` over the stacked increments of
    the remaining states it touches.
    """

    kind = "marginalization"

    def __init__(self, linearization_states: Sequence[NavState], jacobian: np.ndarray, residual: np.ndarray):
        super().__init__([s.timestamp for s in linearization_states])
        self.linearization_states = tuple(linearization_states)
        self.jacobian = np.asarray(jacobian, dtype=float)
        self.residual = np.asarray(residual, dtype=float)

    def _deltas(self, states):
        return [x.box_minus(x0) for x, x0 in zip(states, self.linearization_states)]

    def linearize(self, states):
        deltas = self._deltas(states)
        r = self.jacobian @ np.concatenate(deltas) + self.residual
        blocks = []
        for i, d in enumerate(deltas):
            block = self.jacobian[:, i * STATE_DIM:(i + 1) * STATE_DIM]
            blocks.append(block @ box_minus_jacobian(d))
        return r, blocks

    def whitened_residual(self, states):
        return self.jacobian @ np.concatenate(self._deltas(states)) + self.residual
