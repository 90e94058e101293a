"""Sliding-window node state and its 17-dimensional local parameterization."""
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from core.geodesy.rotation import (
    log_so3,
    quat_box_plus,
    quat_normalize,
    quat_to_euler,
    quat_to_matrix,
)

STATE_DIM = 17
POS = slice(0, 3)
VEL = slice(3, 6)
ROT = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)
CLK = 15
DRIFT = 16


@dataclass(frozen=True)
class LocalIncrement:
    """Tangent-space increment of a NavState.

    Layout: dp(3) dv(3) dtheta(3) dba(3) dbg(3) dclock(1) ddrift(1).
    Rotation is applied multiplicatively through the exponential map, every
    other block additively.
    """

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float).reshape(STATE_DIM)
        object.__setattr__(self, "vector", vec)

    @classmethod
    def zero(cls) -> "LocalIncrement":
        return cls(np.zeros(STATE_DIM))

    @property
    def dp(self) -> np.ndarray:
        return self.vector[POS]

    @property
    def dv(self) -> np.ndarray:
        return self.vector[VEL]

    @property
    def dtheta(self) -> np.ndarray:
        return self.vector[ROT]

    @property
    def dba(self) -> np.ndarray:
        return self.vector[BA]

    @property
    def dbg(self) -> np.ndarray:
        return self.vector[BG]

    @property
    def dclock(self) -> float:
        return float(self.vector[CLK])

    @property
    def ddrift(self) -> float:
        return float(self.vector[DRIFT])


def _vec3(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(3)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NavState:
    """One sliding-window node.

    Attributes:
        timestamp (float): seconds
        position (np.ndarray): IMU position in ENU [m]
        velocity (np.ndarray): ENU velocity [m/s]
        orientation (np.ndarray): body-to-ENU unit quaternion [w, x, y, z]
        accel_bias (np.ndarray): accelerometer bias [m/s^2]
        gyro_bias (np.ndarray): gyroscope bias [rad/s]
        clock_bias (float): receiver clock bias [m]
        clock_drift (float): receiver clock drift [m/s]
    """

    timestamp: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock_bias: float = 0.0
    clock_drift: float = 0.0

    def __post_init__(self):
        for name in ("position", "velocity", "accel_bias", "gyro_bias"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        q = quat_normalize(np.array(self.orientation, dtype=float).reshape(4))
        q.setflags(write=False)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "clock_bias", float(self.clock_bias))
        object.__setattr__(self, "clock_drift", float(self.clock_drift))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if not self.is_finite():
            raise ValueError(f"NavState at t={self.timestamp} has non-finite fields")

    @property
    def rotation(self) -> np.ndarray:
        """Body-to-ENU rotation matrix."""
        return quat_to_matrix(self.orientation)

    @property
    def euler(self) -> np.ndarray:
        """(roll, pitch, yaw) in radians."""
        return quat_to_euler(self.orientation)

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.velocity))
            and np.all(np.isfinite(self.orientation))
            and np.all(np.isfinite(self.accel_bias))
            and np.all(np.isfinite(self.gyro_bias))
            and np.isfinite(self.clock_bias)
            and np.isfinite(self.clock_drift)
        )

    def box_plus(self, delta: Union[LocalIncrement, np.ndarray]) -> "NavState":
        """Apply a local increment."""
        d = delta.vector if isinstance(delta, LocalIncrement) else np.asarray(delta, dtype=float)
        return NavState(
            timestamp=self.timestamp,
            position=self.position + d[POS],
            velocity=self.velocity + d[VEL],
            orientation=quat_box_plus(self.orientation, d[ROT]),
            accel_bias=self.accel_bias + d[BA],
            gyro_bias=self.gyro_bias + d[BG],
            clock_bias=self.clock_bias + d[CLK],
            clock_drift=self.clock_drift + d[DRIFT],
        )

    def box_minus(self, other: "NavState") -> np.ndarray:
        """Increment d such that ``other.box_plus(d)`` equals this state."""
        d = np.zeros(STATE_DIM)
        d[POS] = self.position - other.position
        d[VEL] = self.velocity - other.velocity
        d[ROT] = log_so3(other.rotation.T @ self.rotation)
        d[BA] = self.accel_bias - other.accel_bias
        d[BG] = self.gyro_bias - other.gyro_bias
        d[CLK] = self.clock_bias - other.clock_bias
        d[DRIFT] = self.clock_drift - other.clock_drift
        return d

    def replace(self, **changes) -> "NavState":
        return replace(self, **changes)

    def to_row(self) -> list:
        """Flat row matching the trajectory file columns."""
        return [
            self.timestamp,
            *self.position,
            *self.velocity,
            *self.orientation,
            *self.accel_bias,
            *self.gyro_bias,
            self.clock_bias,
            self.clock_drift,
        ]
