"""Deterministic generation of ground truth and raw sensor streams."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from core.backend.state import NavState
from core.errors import ConfigError
from core.geodesy.frames import (
    WGS84_A,
    FrameSet,
    GeodeticPoint,
    elevation_azimuth,
    enu_to_ecef,
    sagnac_correction,
)
from core.geodesy.rotation import quat_from_euler, quat_to_matrix
from core.gnss.observations import (
    B1I_WAVELENGTH,
    GnssEpoch,
    SatelliteObservation,
    SatelliteState,
)
from core.preintegration.imu_preintegration import DEFAULT_GRAVITY, ImuSample
from core.radar.ego_velocity import RadarScan
from core.simulator.scenario import Scenario
from core.simulator.trajectory import KinematicSample, ParametricTrajectory

logger = logging.getLogger(__name__)

IONOSPHERE_HEIGHT = 350e3
DOPPLER_STEP = 1e-3


@dataclass(frozen=True, eq=False)
class CircularOrbit:
    """Satellite on a circular orbit, in ECEF, parameterized by time."""

    sat_id: str
    radius: float
    rate: float
    e1: np.ndarray
    e2: np.ndarray
    clock_error: float

    def position(self, t: float) -> np.ndarray:
        return self.radius * (math.cos(self.rate * t) * self.e1 + math.sin(self.rate * t) * self.e2)


@dataclass
class SimulationResult:
    """Ground truth and sensor streams of one scenario run.

    Attributes:
        scenario (Scenario): the generating scenario
        frames (FrameSet): frames of the simulated platform
        truth (List[NavState]): ground truth at the IMU rate
        imu (List[ImuSample]): IMU stream
        radar (List[RadarScan]): radar scans
        gnss (List[GnssEpoch]): GNSS epochs
        ambiguities (Dict[str, List[int]]): integer ambiguity of every satellite per epoch
        injected_slips (List[Tuple[str, float]]): (sat_id, first epoch affected)
        radar_outliers (List[List[int]]): indices of moving-target points per scan
    """

    scenario: Scenario
    frames: FrameSet
    truth: List[NavState] = field(default_factory=list)
    imu: List[ImuSample] = field(default_factory=list)
    radar: List[RadarScan] = field(default_factory=list)
    gnss: List[GnssEpoch] = field(default_factory=list)
    ambiguities: Dict[str, List[int]] = field(default_factory=dict)
    injected_slips: List[Tuple[str, float]] = field(default_factory=list)
    radar_outliers: List[List[int]] = field(default_factory=list)


def _times(duration: float, rate: float) -> np.ndarray:
    return np.arange(int(math.floor(duration * rate + 1e-9)) + 1) / rate


def _orbit_through(sat_id: str, frames: FrameSet, azimuth: float, elevation: float,
                   radius: float, period: float, clock_error: float) -> CircularOrbit:
    """Circular orbit passing through the given look angles from the origin at t = 0."""
    u_enu = np.array([
        math.cos(elevation) * math.sin(azimuth),
        math.cos(elevation) * math.cos(azimuth),
        math.sin(elevation),
    ])
    u = frames.rotation_ecef_from_enu @ u_enu
    p0 = frames.origin_ecef
    b = float(p0 @ u)
    distance = -b + math.sqrt(b * b - (p0 @ p0 - radius * radius))
    e1 = (p0 + distance * u) / radius
    axis = np.cross(e1, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(axis) < 1e-6:
        axis = np.cross(e1, np.array([1.0, 0.0, 0.0]))
    axis /= np.linalg.norm(axis)
    e2 = np.cross(axis, e1)
    return CircularOrbit(sat_id, radius, 2.0 * math.pi / period, e1, e2, clock_error)


def build_constellation(scenario: Scenario, frames: FrameSet) -> List[CircularOrbit]:
    spec = scenario.constellation
    orbits = []
    if spec.satellites:
        for sat in spec.satellites:
            orbits.append(_orbit_through(
                sat.sat_id, frames, math.radians(sat.azimuth_deg), math.radians(sat.elevation_deg),
                spec.orbit_radius, spec.orbit_period, sat.clock_error,
            ))
        return orbits
    for i in range(spec.count):
        azimuth = 2.0 * math.pi * i / spec.count
        elevation = math.radians(spec.elevations_deg[i % len(spec.elevations_deg)])
        clock_error = 15.0 * (i + 1) * (-1) ** i
        orbits.append(_orbit_through(
            f"C{i + 1:02d}", frames, azimuth, elevation, spec.orbit_radius, spec.orbit_period, clock_error,
        ))
    return orbits


class ClockModel:
    """Receiver clock with piecewise-constant drift."""

    def __init__(self, scenario: Scenario):
        self.bias0 = scenario.clock.bias
        self.drift0 = scenario.clock.drift
        self.steps = sorted((s.t, s.delta) for s in scenario.clock.drift_steps)

    def drift(self, t: float) -> float:
        return self.drift0 + sum(d for ts, d in self.steps if ts <= t)

    def bias(self, t: float) -> float:
        return self.bias0 + self.drift0 * t + sum(d * (t - ts) for ts, d in self.steps if ts <= t)


class DataGenerator:
    """Produces a SimulationResult from a Scenario.

    All random draws come from one generator seeded by the scenario, in a
    fixed order, so identical scenarios yield identical output.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        origin = GeodeticPoint(
            math.radians(scenario.origin.latitude_deg),
            math.radians(scenario.origin.longitude_deg),
            scenario.origin.height,
        )
        self.frames = FrameSet.from_origin(
            origin,
            lever_arm_gnss=np.array(scenario.lever_arm_gnss, dtype=float),
            rotation_body_from_radar=quat_to_matrix(
                quat_from_euler(0.0, 0.0, math.radians(scenario.radar.mounting_yaw_deg))
            ),
        )
        self.trajectory = ParametricTrajectory(scenario.trajectory)
        self.clock = ClockModel(scenario)
        self.orbits = build_constellation(scenario, self.frames)
        self.wavelength = scenario.constellation.wavelength or B1I_WAVELENGTH
        self.gravity = DEFAULT_GRAVITY
        self.rng = np.random.default_rng(scenario.seed)

    def generate(self) -> SimulationResult:
        result = SimulationResult(self.scenario, self.frames)
        ambiguity = {
            o.sat_id: int(self.rng.integers(1_000, 100_000)) for o in self.orbits
        }
        self._generate_imu(result)
        self._generate_radar(result)
        self._generate_gnss(result, ambiguity)
        logger.info(
            "Generated %d IMU samples, %d radar scans, %d GNSS epochs for '%s'",
            len(result.imu), len(result.radar), len(result.gnss), self.scenario.name,
        )
        return result

    def truth_state(self, k: KinematicSample) -> NavState:
        noise = self.scenario.noise
        return NavState(
            timestamp=k.t,
            position=k.position,
            velocity=k.velocity,
            orientation=k.orientation,
            accel_bias=noise.accel_bias,
            gyro_bias=noise.gyro_bias,
            clock_bias=self.clock.bias(k.t),
            clock_drift=self.clock.drift(k.t),
        )

    def _generate_imu(self, result: SimulationResult) -> None:
        noise = self.scenario.noise
        times = _times(self.scenario.duration, self.scenario.rates.imu_hz)
        accel_noise = self.rng.normal(0.0, noise.accel, (len(times), 3)) if noise.accel > 0 else np.zeros((len(times), 3))
        gyro_noise = self.rng.normal(0.0, noise.gyro, (len(times), 3)) if noise.gyro > 0 else np.zeros((len(times), 3))
        for i, t in enumerate(times):
            k = self.trajectory.sample(t)
            state = self.truth_state(k)
            R = state.rotation
            accel = R.T @ (k.acceleration - self.gravity) + state.accel_bias + accel_noise[i]
            gyro = np.array([0.0, 0.0, k.yaw_rate]) + state.gyro_bias + gyro_noise[i]
            result.truth.append(state)
            result.imu.append(ImuSample(t, accel, gyro))

    def _generate_radar(self, result: SimulationResult) -> None:
        spec = self.scenario.radar
        faults = self.scenario.faults
        sigma = self.scenario.noise.radar_doppler
        R_br = self.frames.rotation_body_from_radar
        n = spec.points_per_scan
        n_outliers = int(round(faults.radar_outlier_fraction * n))
        half_h = math.radians(spec.horizontal_fov_deg) / 2.0
        half_v = math.radians(spec.vertical_fov_deg) / 2.0
        for t in _times(self.scenario.duration, self.scenario.rates.radar_hz):
            k = self.trajectory.sample(t)
            v_body = quat_to_matrix(k.orientation).T @ k.velocity
            v_radar = R_br.T @ v_body
            ranges = self.rng.uniform(spec.min_range, spec.max_range, n)
            azimuths = self.rng.uniform(-half_h, half_h, n)
            elevations = self.rng.uniform(-half_v, half_v, n)
            directions = np.column_stack([
                np.cos(elevations) * np.cos(azimuths),
                np.cos(elevations) * np.sin(azimuths),
                np.sin(elevations),
            ])
            doppler = directions @ v_radar
            if sigma > 0:
                doppler = doppler + self.rng.normal(0.0, sigma, n)
            if n_outliers:
                signs = self.rng.choice([-1.0, 1.0], n_outliers)
                offsets = faults.radar_outlier_separation + self.rng.uniform(0.0, 3.0, n_outliers)
                doppler[:n_outliers] += signs * offsets
            result.radar.append(RadarScan.from_arrays(t, directions * ranges[:, None], doppler))
            result.radar_outliers.append(list(range(n_outliers)))

    def antenna_ecef(self, state: NavState) -> np.ndarray:
        return enu_to_ecef(state.position + state.rotation @ self.frames.lever_arm_gnss, self.frames)

    def _atmosphere(self, p_sat: np.ndarray, p_rcv: np.ndarray) -> Tuple[float, float]:
        spec = self.scenario.constellation
        elevation, _ = elevation_azimuth(p_sat, p_rcv)
        sin_el = max(math.sin(elevation), 0.05)
        obliquity = WGS84_A * math.cos(elevation) / (WGS84_A + IONOSPHERE_HEIGHT)
        tropo = spec.zenith_troposphere / sin_el
        iono = spec.zenith_ionosphere / math.sqrt(1.0 - obliquity * obliquity)
        return tropo, iono

    def _phase_meters(self, orbit: CircularOrbit, t: float) -> float:
        """Carrier phase in meters without ambiguity and noise."""
        state = self.truth_state(self.trajectory.sample(t))
        p_rcv = self.antenna_ecef(state)
        p_sat = orbit.position(t)
        tropo, iono = self._atmosphere(p_sat, p_rcv)
        return float(np.linalg.norm(p_sat - p_rcv) + state.clock_bias - orbit.clock_error + tropo - iono)

    def _outage(self, t: float) -> bool:
        return any(w.start <= t < w.end for w in self.scenario.faults.gnss_outages)

    def _generate_gnss(self, result: SimulationResult, ambiguity: Dict[str, int]) -> None:
        noise = self.scenario.noise
        faults = self.scenario.faults
        lam = self.wavelength
        slipped = set()
        result.ambiguities = {o.sat_id: [] for o in self.orbits}
        for t in _times(self.scenario.duration, self.scenario.rates.gnss_hz):
            pr_noise = self.rng.normal(0.0, noise.pseudorange, len(self.orbits)) if noise.pseudorange > 0 else np.zeros(len(self.orbits))
            ph_noise = self.rng.normal(0.0, noise.carrier_phase, len(self.orbits)) if noise.carrier_phase > 0 else np.zeros(len(self.orbits))
            dop_noise = self.rng.normal(0.0, noise.doppler, len(self.orbits)) if noise.doppler > 0 else np.zeros(len(self.orbits))
            if self._outage(t):
                continue
            state = self.truth_state(self.trajectory.sample(t))
            p_rcv = self.antenna_ecef(state)
            pairs = []
            for i, orbit in enumerate(self.orbits):
                for slip in faults.cycle_slips:
                    key = (slip.sat_id, slip.t)
                    if slip.sat_id == orbit.sat_id and slip.t <= t and key not in slipped:
                        slipped.add(key)
                        ambiguity[orbit.sat_id] += slip.cycles
                        result.injected_slips.append((orbit.sat_id, float(t)))
                result.ambiguities[orbit.sat_id].append(ambiguity[orbit.sat_id])

                p_sat = orbit.position(t)
                tropo, iono = self._atmosphere(p_sat, p_rcv)
                multipath = sum(
                    m.bias for m in faults.multipath if m.sat_id == orbit.sat_id and m.start <= t < m.end
                )
                pseudorange = (
                    np.linalg.norm(p_sat - p_rcv) + state.clock_bias - orbit.clock_error
                    + tropo + iono + sagnac_correction(p_sat, p_rcv) + multipath + pr_noise[i]
                )
                phase_m = self._phase_meters(orbit, t)
                rate = (
                    self._phase_meters(orbit, t + DOPPLER_STEP) - self._phase_meters(orbit, t - DOPPLER_STEP)
                ) / (2.0 * DOPPLER_STEP)
                obs = SatelliteObservation(
                    sat_id=orbit.sat_id,
                    pseudorange=float(pseudorange),
                    carrier_phase=(phase_m + ph_noise[i]) / lam + ambiguity[orbit.sat_id],
                    doppler=float(rate / lam + dop_noise[i]),
                    snr=45.0,
                    wavelength=lam,
                )
                sat = SatelliteState(p_sat, orbit.clock_error, tropo, iono)
                pairs.append((obs, sat))
            result.gnss.append(GnssEpoch.from_pairs(float(t), pairs))


def generate(scenario: Scenario) -> SimulationResult:
    """Run the generator for ``scenario``.

    Raises:
        ConfigError: If the scenario cannot be simulated
    """
    if not scenario.constellation.satellites and scenario.constellation.count < 1:
        raise ConfigError("Scenario has no satellites")
    return DataGenerator(scenario).generate()
