"""Scenario description for the synthetic data generator."""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from config.schema import build_dataclass, dataclass_to_dict
from core.errors import ConfigError

TRAJECTORY_KINDS = ("stationary", "straight", "circle", "figure_eight")


def _positive(section: str, **values) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ConfigError(f"{section}.{name} must be positive, got {value}")


def _non_negative(section: str, **values) -> None:
    for name, value in values.items():
        if value < 0:
            raise ConfigError(f"{section}.{name} must be non-negative, got {value}")


@dataclass
class OriginSpec:
    latitude_deg: float = 30.5
    longitude_deg: float = 114.3
    height: float = 20.0

    def __post_init__(self):
        if abs(self.latitude_deg) > 90.0:
            raise ConfigError(f"origin.latitude_deg out of range: {self.latitude_deg}")


@dataclass
class TrajectorySpec:
    """Parametric planar trajectory at constant height.

    ``speed`` applies to straight and circle, ``radius`` to circle,
    ``amplitude`` and ``period`` to the figure-eight.
    """

    kind: str = "figure_eight"
    speed: float = 5.0
    heading_deg: float = 0.0
    radius: float = 30.0
    amplitude: float = 100.0
    period: float = 120.0
    height: float = 0.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ConfigError(f"trajectory.kind must be one of {TRAJECTORY_KINDS}, got {self.kind!r}")
        _positive("trajectory", radius=self.radius, amplitude=self.amplitude, period=self.period)
        _non_negative("trajectory", speed=self.speed)


@dataclass
class RateSpec:
    imu_hz: float = 100.0
    radar_hz: float = 15.0
    gnss_hz: float = 1.0

    def __post_init__(self):
        _positive("rates", imu_hz=self.imu_hz, radar_hz=self.radar_hz, gnss_hz=self.gnss_hz)


@dataclass
class NoiseSpec:
    """Per-sample standard deviations and constant sensor biases."""

    accel: float = 0.02
    gyro: float = 2e-4
    accel_bias: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    gyro_bias: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    pseudorange: float = 1.0
    carrier_phase: float = 0.005
    doppler: float = 0.1
    radar_doppler: float = 0.1

    def __post_init__(self):
        _non_negative(
            "noise", accel=self.accel, gyro=self.gyro, pseudorange=self.pseudorange,
            carrier_phase=self.carrier_phase, doppler=self.doppler, radar_doppler=self.radar_doppler,
        )
        for name in ("accel_bias", "gyro_bias"):
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"noise.{name} must have three components")

    @classmethod
    def noise_free(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, [0.0] * 3, [0.0] * 3, 0.0, 0.0, 0.0, 0.0)


@dataclass
class MultipathSpec:
    sat_id: str
    start: float
    end: float
    bias: float = 10.0


@dataclass
class CycleSlipSpec:
    sat_id: str
    t: float
    cycles: int = 1


@dataclass
class OutageSpec:
    start: float
    end: float


@dataclass
class FaultSpec:
    multipath: List[MultipathSpec] = field(default_factory=list)
    cycle_slips: List[CycleSlipSpec] = field(default_factory=list)
    gnss_outages: List[OutageSpec] = field(default_factory=list)
    radar_outlier_fraction: float = 0.0
    radar_outlier_separation: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.radar_outlier_fraction < 1.0:
            raise ConfigError(
                f"faults.radar_outlier_fraction must lie in [0, 1), got {self.radar_outlier_fraction}"
            )
        _non_negative("faults", radar_outlier_separation=self.radar_outlier_separation)


@dataclass
class SatelliteSpec:
    sat_id: str
    azimuth_deg: float
    elevation_deg: float
    clock_error: float = 0.0


@dataclass
class ConstellationSpec:
    """Circular-orbit satellites, placed at the given look angles at t = 0.

    When ``satellites`` is empty, ``count`` satellites are spread evenly in
    azimuth with elevations cycling through ``elevations_deg``.
    """

    count: int = 8
    orbit_radius: float = 2.8e7
    orbit_period: float = 43082.0
    elevations_deg: List[float] = field(default_factory=lambda: [25.0, 40.0, 55.0, 70.0, 35.0, 60.0, 30.0, 80.0])
    satellites: List[SatelliteSpec] = field(default_factory=list)
    zenith_ionosphere: float = 3.0
    zenith_troposphere: float = 2.3
    wavelength: Optional[float] = None

    def __post_init__(self):
        _positive("constellation", orbit_radius=self.orbit_radius, orbit_period=self.orbit_period)
        if not self.satellites and self.count < 1:
            raise ConfigError("constellation.count must be at least 1")
        if not self.satellites and not self.elevations_deg:
            raise ConfigError("constellation.elevations_deg must not be empty")
        _non_negative(
            "constellation", zenith_ionosphere=self.zenith_ionosphere,
            zenith_troposphere=self.zenith_troposphere,
        )


@dataclass
class RadarSpec:
    points_per_scan: int = 64
    min_range: float = 2.0
    max_range: float = 80.0
    horizontal_fov_deg: float = 120.0
    vertical_fov_deg: float = 20.0
    mounting_yaw_deg: float = 0.0

    def __post_init__(self):
        if self.points_per_scan < 1:
            raise ConfigError("radar.points_per_scan must be at least 1: the radar frustum is empty")
        if not self.max_range > self.min_range or self.min_range <= 0.5:
            raise ConfigError("radar.min_range/max_range leave an empty radar frustum")
        if not 0.0 < self.horizontal_fov_deg <= 360.0:
            raise ConfigError("radar.horizontal_fov_deg must lie in (0, 360]: the radar frustum is empty")
        if not 0.0 <= self.vertical_fov_deg < 180.0:
            raise ConfigError("radar.vertical_fov_deg must lie in [0, 180)")


@dataclass
class ClockStepSpec:
    t: float
    delta: float


@dataclass
class ClockSpec:
    bias: float = 150.0
    drift: float = 0.2
    drift_steps: List[ClockStepSpec] = field(default_factory=list)


@dataclass
class Scenario:
    """Complete simulator input."""

    name: str = "scenario"
    duration: float = 120.0
    seed: int = 0
    origin: OriginSpec = field(default_factory=OriginSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    rates: RateSpec = field(default_factory=RateSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    faults: FaultSpec = field(default_factory=FaultSpec)
    constellation: ConstellationSpec = field(default_factory=ConstellationSpec)
    radar: RadarSpec = field(default_factory=RadarSpec)
    clock: ClockSpec = field(default_factory=ClockSpec)
    lever_arm_gnss: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def __post_init__(self):
        _positive("scenario", duration=self.duration)
        if len(self.lever_arm_gnss) != 3:
            raise ConfigError("lever_arm_gnss must have three components")
        for i, window in enumerate(self.faults.multipath):
            self._check_window(f"faults.multipath[{i}]", window.start, window.end)
        for i, window in enumerate(self.faults.gnss_outages):
            self._check_window(f"faults.gnss_outages[{i}]", window.start, window.end)
        for i, slip in enumerate(self.faults.cycle_slips):
            if not 0.0 < slip.t <= self.duration:
                raise ConfigError(f"faults.cycle_slips[{i}].t outside the scenario duration")

    def _check_window(self, name: str, start: float, end: float) -> None:
        if not 0.0 <= start < end <= self.duration:
            raise ConfigError(f"{name} must satisfy 0 <= start < end <= duration")

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return build_dataclass(cls, data)

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        """Parse a JSON scenario file.

        Raises:
            ConfigError: If the file is not valid JSON or violates the schema
        """
        try:
            with Path(path).open("r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"Scenario file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclass_to_dict(self)

    def with_seed(self, seed: int) -> "Scenario":
        data = self.to_dict()
        data["seed"] = seed
        return Scenario.from_dict(data)
