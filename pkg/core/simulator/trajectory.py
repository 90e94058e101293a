"""Analytic ground-truth motion of the simulated platform.

Trajectories are planar at constant height with the body x axis along the
velocity, so roll and pitch stay zero and the body velocity is purely
longitudinal.
"""
import math
from dataclasses import dataclass

import numpy as np

from core.geodesy.rotation import quat_from_euler
from core.simulator.scenario import TrajectorySpec


@dataclass(frozen=True, eq=False)
class KinematicSample:
    """Position, velocity, acceleration and heading at one instant (ENU)."""

    t: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    yaw_rate: float

    @property
    def orientation(self) -> np.ndarray:
        return quat_from_euler(0.0, 0.0, self.yaw)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


class ParametricTrajectory:
    """Closed-form trajectory selected by ``TrajectorySpec.kind``."""

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec

    def _planar(self, t: float):
        s = self.spec
        if s.kind == "stationary":
            return np.zeros(2), np.zeros(2), np.zeros(2)
        if s.kind == "straight":
            h = math.radians(s.heading_deg)
            u = np.array([math.cos(h), math.sin(h)])
            return s.speed * t * u, s.speed * u, np.zeros(2)
        if s.kind == "circle":
            w = s.speed / s.radius
            c, sn = math.cos(w * t), math.sin(w * t)
            p = s.radius * np.array([sn, 1.0 - c])
            v = s.speed * np.array([c, sn])
            a = s.speed * w * np.array([-sn, c])
            return p, v, a
        # figure eight
        A, w = s.amplitude, 2.0 * math.pi / s.period
        p = np.array([A * math.sin(w * t), 0.5 * A * math.sin(2 * w * t)])
        v = np.array([A * w * math.cos(w * t), A * w * math.cos(2 * w * t)])
        a = np.array([-A * w * w * math.sin(w * t), -2.0 * A * w * w * math.sin(2 * w * t)])
        return p, v, a

    def sample(self, t: float) -> KinematicSample:
        p, v, a = self._planar(t)
        speed_sq = float(v @ v)
        if speed_sq < 1e-12:
            yaw = math.radians(self.spec.heading_deg)
            yaw_rate = 0.0
        else:
            yaw = math.atan2(v[1], v[0])
            yaw_rate = float((v[0] * a[1] - v[1] * a[0]) / speed_sq)
        return KinematicSample(
            t=float(t),
            position=np.array([p[0], p[1], self.spec.height]),
            velocity=np.array([v[0], v[1], 0.0]),
            acceleration=np.array([a[0], a[1], 0.0]),
            yaw=yaw,
            yaw_rate=yaw_rate,
        )
