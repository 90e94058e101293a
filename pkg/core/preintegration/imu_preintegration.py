"""IMU preintegration between consecutive keyframes.

The position (alpha), velocity (beta) and rotation (gamma) terms are
accumulated with midpoint integration in the frame of the first body pose.
Gravity is kept out of the accumulated terms and is accounted for in
:func:`imu_residual`, so a stationary, level IMU yields beta = 0 only after
the gravity term is added back.
"""
import logging
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.backend.state import BA, BG, POS, ROT, STATE_DIM, VEL, NavState
from core.errors import PreintegrationError
from core.geodesy.rotation import (
    exp_so3,
    log_so3,
    quat_box_plus,
    quat_identity,
    quat_multiply,
    quat_exp,
    quat_normalize,
    quat_slerp,
    quat_to_matrix,
    right_jacobian,
    right_jacobian_inv,
    skew,
)

logger = logging.getLogger(__name__)

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])

# error-state layout of the preintegrated terms
ALPHA = slice(0, 3)
BETA = slice(3, 6)
THETA = slice(6, 9)
BIAS_A = slice(9, 12)
BIAS_G = slice(12, 15)


@dataclass(frozen=True, eq=False)
class ImuSample:
    """One IMU reading.

    Attributes:
        timestamp (float): seconds
        accel (np.ndarray): specific force in the body frame [m/s^2]
        gyro (np.ndarray): angular rate in the body frame [rad/s]
    """

    timestamp: float
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.gyro))):
            raise PreintegrationError(f"Non-finite IMU sample at t={self.timestamp}")


def interpolate_sample(s0: ImuSample, s1: ImuSample, t: float) -> ImuSample:
    """Linear interpolation of a sample at ``t`` inside [s0.t, s1.t]."""
    span = s1.timestamp - s0.timestamp
    if span <= 0.0:
        raise PreintegrationError("Cannot interpolate between non-increasing samples")
    w = (t - s0.timestamp) / span
    return ImuSample(t, (1 - w) * s0.accel + w * s1.accel, (1 - w) * s0.gyro + w * s1.gyro)


@dataclass(frozen=True, eq=False)
class ImuBias:
    """Accelerometer and gyroscope biases."""

    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, dtype=float).reshape(3))
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.accel_bias)) and np.all(np.isfinite(self.gyro_bias))):
            raise PreintegrationError("IMU bias must be finite")

    @classmethod
    def from_state(cls, state: NavState) -> "ImuBias":
        return cls(state.accel_bias, state.gyro_bias)

    def check_bounds(self, accel_bound: float = 1.0, gyro_bound: float = 0.1) -> bool:
        """True when both biases are below their sanity bound."""
        return bool(
            np.max(np.abs(self.accel_bias)) < accel_bound
            and np.max(np.abs(self.gyro_bias)) < gyro_bound
        )

    def delta(self, other: "ImuBias") -> Tuple[np.ndarray, np.ndarray]:
        return self.accel_bias - other.accel_bias, self.gyro_bias - other.gyro_bias


@dataclass(frozen=True)
class ImuNoiseParams:
    """Continuous-time noise densities of the IMU.

    Attributes:
        accel_noise (float): accelerometer white noise [m/s^2/sqrt(Hz)]
        gyro_noise (float): gyroscope white noise [rad/s/sqrt(Hz)]
        accel_bias_rw (float): accelerometer bias random walk [m/s^3/sqrt(Hz)]
        gyro_bias_rw (float): gyroscope bias random walk [rad/s^2/sqrt(Hz)]
        max_sample_gap (float): intervals above this are flagged [s]
    """

    accel_noise: float = 2e-2
    gyro_noise: float = 2e-4
    accel_bias_rw: float = 1e-4
    gyro_bias_rw: float = 1e-5
    max_sample_gap: float = 0.1


@dataclass(frozen=True, eq=False)
class PreintegratedImu:
    """Preintegrated IMU terms between two keyframes.

    Attributes:
        alpha (np.ndarray): position term [m]
        beta (np.ndarray): velocity term [m/s]
        gamma (np.ndarray): rotation term, unit quaternion [w, x, y, z]
        dt_total (float): integrated time [s]
        linearization_bias (ImuBias): bias used while integrating
        covariance (np.ndarray): 15x15 over (alpha, beta, theta, b_a, b_g)
        jacobian (np.ndarray): 15x15 error-state transition from the start
        start_time (float): timestamp of the first keyframe
        samples (tuple): raw samples kept for re-integration
        checkpoints (tuple): (timestamp, gamma) after every step
        gap_count (int): number of intervals longer than the allowed gap
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    dt_total: float
    linearization_bias: ImuBias
    covariance: np.ndarray
    jacobian: np.ndarray
    start_time: float
    samples: Tuple[ImuSample, ...] = ()
    checkpoints: Tuple[Tuple[float, np.ndarray], ...] = ()
    gap_count: int = 0

    @classmethod
    def empty(cls, start_time: float, bias: Optional[ImuBias] = None) -> "PreintegratedImu":
        return cls(
            alpha=np.zeros(3),
            beta=np.zeros(3),
            gamma=quat_identity(),
            dt_total=0.0,
            linearization_bias=bias or ImuBias(),
            covariance=np.zeros((15, 15)),
            jacobian=np.eye(15),
            start_time=float(start_time),
            checkpoints=((float(start_time), quat_identity()),),
        )

    @property
    def end_time(self) -> float:
        return self.start_time + self.dt_total

    @property
    def jacobian_wrt_bias(self) -> np.ndarray:
        """15x6 sensitivity of the terms to (b_a, b_g)."""
        return self.jacobian[:, 9:15]

    def rotation_at(self, t: float) -> np.ndarray:
        """Preintegrated rotation at time ``t``, slerped between checkpoints."""
        times = [c[0] for c in self.checkpoints]
        if t <= times[0]:
            return self.checkpoints[0][1]
        if t >= times[-1]:
            return self.checkpoints[-1][1]
        i = bisect_left(times, t)
        t0, q0 = self.checkpoints[i - 1]
        t1, q1 = self.checkpoints[i]
        return quat_slerp(q0, q1, (t - t0) / (t1 - t0))


def integrate(
    state: PreintegratedImu,
    sample_k: ImuSample,
    sample_k1: ImuSample,
    noise: Optional[ImuNoiseParams] = None,
) -> PreintegratedImu:
    """Advance the preintegration by one midpoint step.

    Args:
        state (PreintegratedImu): terms accumulated so far
        sample_k (ImuSample): sample at the start of the step
        sample_k1 (ImuSample): sample at the end of the step
        noise (Optional[ImuNoiseParams]): noise densities

    Returns:
        PreintegratedImu: the updated terms

    Raises:
        PreintegrationError: If the timestamps do not increase
    """
    noise = noise or ImuNoiseParams()
    dt = sample_k1.timestamp - sample_k.timestamp
    if not dt > 0.0:
        raise PreintegrationError(
            f"Non-monotonic IMU timestamps: {sample_k.timestamp} -> {sample_k1.timestamp}"
        )
    gap_count = state.gap_count
    if dt > noise.max_sample_gap:
        logger.warning("IMU sample gap of %.3f s at t=%.3f", dt, sample_k.timestamp)
        gap_count += 1

    ba = state.linearization_bias.accel_bias
    bg = state.linearization_bias.gyro_bias
    a0 = sample_k.accel - ba
    a1 = sample_k1.accel - ba
    w_mid = 0.5 * (sample_k.gyro + sample_k1.gyro) - bg

    R_k = quat_to_matrix(state.gamma)
    gamma = quat_box_plus(state.gamma, w_mid * dt)
    R_k1 = quat_to_matrix(gamma)
    acc_mid = 0.5 * (R_k @ a0 + R_k1 @ a1)
    alpha = state.alpha + state.beta * dt + 0.5 * acc_mid * dt * dt
    beta = state.beta + acc_mid * dt

    I3 = np.eye(3)
    Rw = skew(w_mid)
    Ra0 = skew(a0)
    Ra1 = skew(a1)
    rot_step = I3 - Rw * dt

    F = np.eye(15)
    F[ALPHA, BETA] = I3 * dt
    F[ALPHA, THETA] = -0.25 * (R_k @ Ra0 + R_k1 @ Ra1 @ rot_step) * dt * dt
    F[ALPHA, BIAS_A] = -0.25 * (R_k + R_k1) * dt * dt
    F[ALPHA, BIAS_G] = 0.25 * R_k1 @ Ra1 * dt * dt * dt
    F[BETA, THETA] = -0.5 * (R_k @ Ra0 + R_k1 @ Ra1 @ rot_step) * dt
    F[BETA, BIAS_A] = -0.5 * (R_k + R_k1) * dt
    F[BETA, BIAS_G] = 0.5 * R_k1 @ Ra1 * dt * dt
    F[THETA, THETA] = rot_step
    F[THETA, BIAS_G] = -I3 * dt

    # noise inputs: accel_k, gyro_k, accel_k1, gyro_k1, accel bias rw, gyro bias rw
    V = np.zeros((15, 18))
    V[ALPHA, 0:3] = 0.25 * R_k * dt * dt
    V[ALPHA, 3:6] = -0.125 * R_k1 @ Ra1 * dt ** 3
    V[ALPHA, 6:9] = 0.25 * R_k1 * dt * dt
    V[ALPHA, 9:12] = V[ALPHA, 3:6]
    V[BETA, 0:3] = 0.5 * R_k * dt
    V[BETA, 3:6] = -0.25 * R_k1 @ Ra1 * dt * dt
    V[BETA, 6:9] = 0.5 * R_k1 * dt
    V[BETA, 9:12] = V[BETA, 3:6]
    V[THETA, 3:6] = 0.5 * I3 * dt
    V[THETA, 9:12] = 0.5 * I3 * dt
    V[BIAS_A, 12:15] = I3 * dt
    V[BIAS_G, 15:18] = I3 * dt
    q_diag = np.repeat(
        [
            noise.accel_noise ** 2,
            noise.gyro_noise ** 2,
            noise.accel_noise ** 2,
            noise.gyro_noise ** 2,
            noise.accel_bias_rw ** 2,
            noise.gyro_bias_rw ** 2,
        ],
        3,
    ) / dt

    covariance = F @ state.covariance @ F.T + (V * q_diag) @ V.T
    covariance = 0.5 * (covariance + covariance.T)

    samples = state.samples
    if not samples or samples[-1].timestamp != sample_k.timestamp:
        samples = samples + (sample_k,)
    samples = samples + (sample_k1,)

    return replace(
        state,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        dt_total=state.dt_total + dt,
        covariance=covariance,
        jacobian=F @ state.jacobian,
        samples=samples,
        checkpoints=state.checkpoints + ((sample_k1.timestamp, gamma),),
        gap_count=gap_count,
    )


def integrate_samples(
    samples: Sequence[ImuSample],
    bias: Optional[ImuBias] = None,
    noise: Optional[ImuNoiseParams] = None,
) -> PreintegratedImu:
    """Fold :func:`integrate` over a sample sequence."""
    if len(samples) < 1:
        raise PreintegrationError("No IMU samples to integrate")
    result = PreintegratedImu.empty(samples[0].timestamp, bias)
    for s0, s1 in zip(samples[:-1], samples[1:]):
        result = integrate(result, s0, s1, noise)
    return result


def correct_for_bias(
    p: PreintegratedImu,
    new_bias: ImuBias,
    threshold: float = 0.05,
    noise: Optional[ImuNoiseParams] = None,
) -> PreintegratedImu:
    """Move the preintegration to a new bias linearization point.

    Small changes are applied to first order through the stored Jacobians;
    larger ones re-integrate from the buffered samples.

    Raises:
        PreintegrationError: If re-integration is needed but no samples are buffered
    """
    d_ba, d_bg = new_bias.delta(p.linearization_bias)
    if max(np.max(np.abs(d_ba)), np.max(np.abs(d_bg))) > threshold:
        if len(p.samples) < 2:
            raise PreintegrationError(
                "Bias change exceeds the re-linearization threshold and no samples are buffered"
            )
        logger.debug("Re-integrating %d IMU samples for a new bias", len(p.samples))
        return integrate_samples(p.samples, new_bias, noise)
    if not (np.any(d_ba) or np.any(d_bg)):
        return p

    alpha, beta, gamma = _bias_corrected_terms(p, d_ba, d_bg)
    return replace(p, alpha=alpha, beta=beta, gamma=gamma, linearization_bias=new_bias)


def _bias_corrected_terms(p: PreintegratedImu, d_ba: np.ndarray, d_bg: np.ndarray):
    J = p.jacobian
    alpha = p.alpha + J[ALPHA, BIAS_A] @ d_ba + J[ALPHA, BIAS_G] @ d_bg
    beta = p.beta + J[BETA, BIAS_A] @ d_ba + J[BETA, BIAS_G] @ d_bg
    gamma = quat_normalize(quat_multiply(p.gamma, quat_exp(J[THETA, BIAS_G] @ d_bg)))
    return alpha, beta, gamma


def imu_residual(
    p: PreintegratedImu,
    x_k: NavState,
    x_k1: NavState,
    gravity: np.ndarray = DEFAULT_GRAVITY,
    with_jacobians: bool = False,
):
    """IMU factor residual over (d_alpha, d_beta, d_theta, d_b_a, d_b_g).

    Args:
        p (PreintegratedImu): terms between the two states
        x_k (NavState): state at the start of the interval
        x_k1 (NavState): state at the end of the interval
        gravity (np.ndarray): gravity acceleration in ENU
        with_jacobians (bool): also return 15x17 Jacobians for both states

    Returns:
        np.ndarray or (np.ndarray, (np.ndarray, np.ndarray))
    """
    gravity = np.asarray(gravity, dtype=float)
    T = p.dt_total
    d_ba = x_k.accel_bias - p.linearization_bias.accel_bias
    d_bg = x_k.gyro_bias - p.linearization_bias.gyro_bias
    J = p.jacobian
    alpha = p.alpha + J[ALPHA, BIAS_A] @ d_ba + J[ALPHA, BIAS_G] @ d_bg
    beta = p.beta + J[BETA, BIAS_A] @ d_ba + J[BETA, BIAS_G] @ d_bg
    gyro_correction = J[THETA, BIAS_G] @ d_bg
    Gamma = quat_to_matrix(p.gamma) @ exp_so3(gyro_correction)

    R0 = x_k.rotation
    R1 = x_k1.rotation
    u_p = x_k1.position - x_k.position - x_k.velocity * T - 0.5 * gravity * T * T
    u_v = x_k1.velocity - x_k.velocity - gravity * T
    E = Gamma.T @ R0.T @ R1

    r = np.zeros(15)
    r[ALPHA] = R0.T @ u_p - alpha
    r[BETA] = R0.T @ u_v - beta
    r[THETA] = log_so3(E)
    r[BIAS_A] = x_k1.accel_bias - x_k.accel_bias
    r[BIAS_G] = x_k1.gyro_bias - x_k.gyro_bias
    if not with_jacobians:
        return r

    I3 = np.eye(3)
    Jr_inv = right_jacobian_inv(r[THETA])
    J0 = np.zeros((15, STATE_DIM))
    J1 = np.zeros((15, STATE_DIM))

    J0[ALPHA, POS] = -R0.T
    J0[ALPHA, VEL] = -R0.T * T
    J0[ALPHA, ROT] = skew(R0.T @ u_p)
    J0[ALPHA, BA] = -J[ALPHA, BIAS_A]
    J0[ALPHA, BG] = -J[ALPHA, BIAS_G]
    J0[BETA, VEL] = -R0.T
    J0[BETA, ROT] = skew(R0.T @ u_v)
    J0[BETA, BA] = -J[BETA, BIAS_A]
    J0[BETA, BG] = -J[BETA, BIAS_G]
    J0[THETA, ROT] = -Jr_inv @ R1.T @ R0
    J0[THETA, BG] = -Jr_inv @ E.T @ right_jacobian(gyro_correction) @ J[THETA, BIAS_G]
    J0[BIAS_A, BA] = -I3
    J0[BIAS_G, BG] = -I3

    J1[ALPHA, POS] = R0.T
    J1[BETA, VEL] = R0.T
    J1[THETA, ROT] = Jr_inv
    J1[BIAS_A, BA] = I3
    J1[BIAS_G, BG] = I3
    return r, (J0, J1)


def predict_state(
    p: PreintegratedImu,
    x_k: NavState,
    gravity: np.ndarray = DEFAULT_GRAVITY,
) -> NavState:
    """Mechanize the next state from the previous one and the preintegrated terms."""
    gravity = np.asarray(gravity, dtype=float)
    T = p.dt_total
    d_ba, d_bg = ImuBias.from_state(x_k).delta(p.linearization_bias)
    alpha, beta, gamma = _bias_corrected_terms(p, d_ba, d_bg)
    R0 = x_k.rotation
    return NavState(
        timestamp=p.end_time,
        position=x_k.position + x_k.velocity * T + 0.5 * gravity * T * T + R0 @ alpha,
        velocity=x_k.velocity + gravity * T + R0 @ beta,
        orientation=quat_multiply(x_k.orientation, gamma),
        accel_bias=x_k.accel_bias,
        gyro_bias=x_k.gyro_bias,
        clock_bias=x_k.clock_bias + x_k.clock_drift * T,
        clock_drift=x_k.clock_drift,
    )


def split_at(samples: Iterable[ImuSample], t: float):
    """Split a time-ordered sample stream at ``t``.

    A sample exactly at ``t`` is shared by both halves; otherwise a boundary
    sample is linearly interpolated between the two straddling samples.
    """
    samples = list(samples)
    before = [s for s in samples if s.timestamp <= t]
    after = [s for s in samples if s.timestamp >= t]
    if before and after and before[-1].timestamp < t < after[0].timestamp:
        boundary = interpolate_sample(before[-1], after[0], t)
        before.append(boundary)
        after.insert(0, boundary)
    return before, after


class ImuPreintegrator:
    """Buffers streamed IMU samples and cuts them into keyframe intervals."""

    def __init__(self, noise: Optional[ImuNoiseParams] = None):
        self.noise = noise or ImuNoiseParams()
        self._buffer: list = []
        self._start: Optional[float] = None

    @property
    def start_time(self) -> Optional[float]:
        return self._start

    def add_sample(self, sample: ImuSample) -> None:
        if self._buffer and sample.timestamp <= self._buffer[-1].timestamp:
            raise PreintegrationError(
                f"Non-monotonic IMU timestamps: {self._buffer[-1].timestamp} -> {sample.timestamp}"
            )
        self._buffer.append(sample)

    def samples_until(self, t: float) -> list:
        return [s for s in self._buffer if s.timestamp <= t]

    def start(self, t: float) -> None:
        """Open the first interval at keyframe time ``t``."""
        _, after = split_at(self._buffer, t)
        self._buffer = after
        self._start = float(t)

    def finish(self, t: float, bias: Optional[ImuBias] = None) -> PreintegratedImu:
        """Preintegrate [start, t] and open the next interval at ``t``.

        Raises:
            PreintegrationError: If no interval is open or the samples do not reach ``t``
        """
        if self._start is None:
            raise PreintegrationError("IMU preintegrator has no open interval")
        if not self._buffer or self._buffer[-1].timestamp < t:
            raise PreintegrationError(f"IMU samples do not cover keyframe t={t}")
        before, after = split_at(self._buffer, t)
        if len(before) < 2 or before[0].timestamp > self._start:
            raise PreintegrationError(f"IMU samples do not cover ({self._start}, {t}]")
        result = integrate_samples(before, bias, self.noise)
        self._buffer = after
        self._start = float(t)
        return result
