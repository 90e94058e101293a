import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from config.schema import build_dataclass, dataclass_to_dict
from core.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

ENV_PREFIX = "RGF_"
NOISE_MODELS = ("gaussian", "gmm")

# (enable_radar, noise_model) of the compared configurations
PRESETS = {
    "ipt": (False, "gaussian"),
    "radar_vmsf": (True, "gaussian"),
    "radar_unimsf": (True, "gmm"),
}


def _positive(section: str, **values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise ConfigError(f"{section}.{name} must be positive, got {value}")


def _vector(section: str, name: str, value: List[float], size: int) -> None:
    if len(value) != size:
        raise ConfigError(f"{section}.{name} must have {size} elements, got {len(value)}")


@dataclass
class FramesConfig:
    """Sensor extrinsics and the ENU origin policy.

    Attributes:
        lever_arm_gnss (List[float]): antenna offset in the body frame [m]
        radar_mounting_rpy_deg (List[float]): radar-to-body rotation as roll/pitch/yaw [deg]
        enu_origin (Optional[List[float]]): fixed origin [lat deg, lon deg, height m]
        use_dataset_metadata (bool): take origin and extrinsics from the dataset header
            when not set here
    """

    lever_arm_gnss: Optional[List[float]] = None
    radar_mounting_rpy_deg: Optional[List[float]] = None
    enu_origin: Optional[List[float]] = None
    use_dataset_metadata: bool = True

    def __post_init__(self):
        if self.lever_arm_gnss is not None:
            _vector("frames", "lever_arm_gnss", self.lever_arm_gnss, 3)
        if self.radar_mounting_rpy_deg is not None:
            _vector("frames", "radar_mounting_rpy_deg", self.radar_mounting_rpy_deg, 3)
        if self.enu_origin is not None:
            _vector("frames", "enu_origin", self.enu_origin, 3)
            if not -90.0 <= self.enu_origin[0] <= 90.0:
                raise ConfigError(f"frames.enu_origin latitude out of range: {self.enu_origin[0]}")


@dataclass
class ImuConfig:
    accel_noise: float = 2e-2
    gyro_noise: float = 2e-4
    accel_bias_rw: float = 1e-4
    gyro_bias_rw: float = 1e-5
    max_sample_gap: float = 0.1
    gravity: float = 9.81
    bias_relinearization_threshold: float = 0.05
    accel_bias_bound: float = 1.0
    gyro_bias_bound: float = 0.1

    def __post_init__(self):
        _positive(
            "imu",
            accel_noise=self.accel_noise,
            gyro_noise=self.gyro_noise,
            accel_bias_rw=self.accel_bias_rw,
            gyro_bias_rw=self.gyro_bias_rw,
            max_sample_gap=self.max_sample_gap,
            gravity=self.gravity,
            bias_relinearization_threshold=self.bias_relinearization_threshold,
            accel_bias_bound=self.accel_bias_bound,
            gyro_bias_bound=self.gyro_bias_bound,
        )


@dataclass
class RadarConfig:
    min_points: int = 8
    inlier_threshold: float = 0.25
    ransac_iterations: int = 100
    early_exit_fraction: float = 0.95
    min_consensus_fraction: float = 0.4
    seed: int = 0
    velocity_sigma: float = 0.15

    def __post_init__(self):
        if self.min_points < 2:
            raise ConfigError(f"radar.min_points must be at least 2, got {self.min_points}")
        if self.ransac_iterations < 1:
            raise ConfigError(f"radar.ransac_iterations must be at least 1, got {self.ransac_iterations}")
        _positive("radar", inlier_threshold=self.inlier_threshold, velocity_sigma=self.velocity_sigma)
        for name in ("early_exit_fraction", "min_consensus_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"radar.{name} must lie in (0, 1], got {value}")


@dataclass
class GnssConfig:
    elevation_mask_deg: float = 15.0
    pseudorange_sigma: float = 1.0
    tdcp_sigma: float = 0.02
    cycle_slip_threshold: float = 0.05
    doppler_sign: int = 1
    clock_bias_sigma: float = 0.3
    clock_drift_sigma: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.elevation_mask_deg < 90.0:
            raise ConfigError(f"gnss.elevation_mask_deg must lie in [0, 90), got {self.elevation_mask_deg}")
        if self.doppler_sign not in (-1, 1):
            raise ConfigError(f"gnss.doppler_sign must be 1 or -1, got {self.doppler_sign}")
        _positive(
            "gnss",
            pseudorange_sigma=self.pseudorange_sigma,
            tdcp_sigma=self.tdcp_sigma,
            cycle_slip_threshold=self.cycle_slip_threshold,
            clock_bias_sigma=self.clock_bias_sigma,
            clock_drift_sigma=self.clock_drift_sigma,
        )


@dataclass
class RobustConfig:
    history_window: int = 200
    min_residuals: int = 30
    em_max_iterations: int = 100
    em_tolerance: float = 1e-6

    def __post_init__(self):
        if self.history_window < 2:
            raise ConfigError(f"robust.history_window must be at least 2, got {self.history_window}")
        if not 2 <= self.min_residuals <= self.history_window:
            raise ConfigError(
                f"robust.min_residuals must lie in [2, history_window], got {self.min_residuals}"
            )
        if self.em_max_iterations < 1:
            raise ConfigError(f"robust.em_max_iterations must be at least 1, got {self.em_max_iterations}")
        _positive("robust", em_tolerance=self.em_tolerance)


@dataclass
class BackendConfig:
    """Sliding window, optimizer and initial prior settings."""

    window_size: int = 10
    initialization_epochs: int = 3
    max_iterations: int = 50
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    cost_tolerance: float = 1e-9
    initial_lambda: float = 1e-4
    lambda_increase: float = 10.0
    lambda_decrease: float = 0.5
    prior_position_sigma: float = 10.0
    prior_velocity_sigma: float = 10.0
    prior_attitude_sigma: float = 1.0
    prior_accel_bias_sigma: float = 0.1
    prior_gyro_bias_sigma: float = 0.01
    prior_clock_bias_sigma: float = 1e3
    prior_clock_drift_sigma: float = 10.0

    def __post_init__(self):
        if self.window_size < 2:
            raise ConfigError(f"backend.window_size must be at least 2, got {self.window_size}")
        if self.initialization_epochs not in (2, 3):
            raise ConfigError(
                f"backend.initialization_epochs must be 2 or 3, got {self.initialization_epochs}"
            )
        if self.max_iterations < 1:
            raise ConfigError(f"backend.max_iterations must be at least 1, got {self.max_iterations}")
        if not self.lambda_increase > 1.0:
            raise ConfigError(f"backend.lambda_increase must exceed 1, got {self.lambda_increase}")
        if not 0.0 < self.lambda_decrease < 1.0:
            raise ConfigError(f"backend.lambda_decrease must lie in (0, 1), got {self.lambda_decrease}")
        _positive(
            "backend",
            gradient_tolerance=self.gradient_tolerance,
            step_tolerance=self.step_tolerance,
            cost_tolerance=self.cost_tolerance,
            initial_lambda=self.initial_lambda,
            prior_position_sigma=self.prior_position_sigma,
            prior_velocity_sigma=self.prior_velocity_sigma,
            prior_attitude_sigma=self.prior_attitude_sigma,
            prior_accel_bias_sigma=self.prior_accel_bias_sigma,
            prior_gyro_bias_sigma=self.prior_gyro_bias_sigma,
            prior_clock_bias_sigma=self.prior_clock_bias_sigma,
            prior_clock_drift_sigma=self.prior_clock_drift_sigma,
        )


@dataclass
class AblationConfig:
    """Factor-set switches.

    ``preset`` fills the flags left unset; explicit flags always win.
    Without preset or flags the full system runs (radar on, TDCP on, gmm).
    """

    preset: Optional[str] = None
    enable_radar: Optional[bool] = None
    enable_tdcp: Optional[bool] = None
    noise_model: Optional[str] = None

    def __post_init__(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"ablation.preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.noise_model is not None and self.noise_model not in NOISE_MODELS:
            raise ConfigError(f"ablation.noise_model must be one of {list(NOISE_MODELS)}, got {self.noise_model!r}")

    @property
    def radar_enabled(self) -> bool:
        if self.enable_radar is not None:
            return self.enable_radar
        return PRESETS[self.preset][0] if self.preset else True

    @property
    def tdcp_enabled(self) -> bool:
        return True if self.enable_tdcp is None else self.enable_tdcp

    @property
    def resolved_noise_model(self) -> str:
        if self.noise_model is not None:
            return self.noise_model
        return PRESETS[self.preset][1] if self.preset else "gmm"


@dataclass
class _Sections:
    frames: FramesConfig = field(default_factory=FramesConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    radar: RadarConfig = field(default_factory=RadarConfig)
    gnss: GnssConfig = field(default_factory=GnssConfig)
    robust: RobustConfig = field(default_factory=RobustConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    diagnostics_path: Optional[str] = None


class RunConfig:
    """Configuration of one fusion run."""

    SECTIONS = ("frames", "imu", "radar", "gnss", "robust", "backend", "ablation")

    def __init__(
        self,
        frames: Optional[FramesConfig] = None,
        imu: Optional[ImuConfig] = None,
        radar: Optional[RadarConfig] = None,
        gnss: Optional[GnssConfig] = None,
        robust: Optional[RobustConfig] = None,
        backend: Optional[BackendConfig] = None,
        ablation: Optional[AblationConfig] = None,
        diagnostics_path: Optional[str] = None,
    ):
        """Initialize configuration.

        Args:
            frames (Optional[FramesConfig]): extrinsics and ENU origin policy
            imu (Optional[ImuConfig]): IMU noise and preintegration settings
            radar (Optional[RadarConfig]): RANSAC and radar velocity noise
            gnss (Optional[GnssConfig]): elevation mask, measurement noise, cycle-slip threshold
            robust (Optional[RobustConfig]): residual history and EM settings
            backend (Optional[BackendConfig]): window size, LM settings, initial prior
            ablation (Optional[AblationConfig]): factor-set switches
            diagnostics_path (Optional[str]): diagnostics file, next to the trajectory when None
        """
        self.frames = frames or FramesConfig()
        self.imu = imu or ImuConfig()
        self.radar = radar or RadarConfig()
        self.gnss = gnss or GnssConfig()
        self.robust = robust or RobustConfig()
        self.backend = backend or BackendConfig()
        self.ablation = ablation or AblationConfig()
        self.diagnostics_path = str(Path(diagnostics_path)) if diagnostics_path else None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Create configuration from a parsed JSON object.

        Raises:
            ConfigError: On unknown keys, wrong types or out-of-range values
        """
        sections = build_dataclass(_Sections, data)
        return cls(**{name: getattr(sections, name) for name in (*cls.SECTIONS, "diagnostics_path")})

    @classmethod
    def from_env(cls, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Create configuration from environment variables.

        Variables are named ``RGF_<SECTION>_<FIELD>`` (for example
        ``RGF_BACKEND_WINDOW_SIZE=12``); values are parsed as JSON and
        fall back to plain strings.

        Args:
            base (Optional[RunConfig]): configuration to override, defaults otherwise

        Returns:
            RunConfig: Configuration object
        """
        data = (base or cls()).to_dict()
        for key, raw in os.environ.items():
            if not key.startswith(ENV_PREFIX):
                continue
            name = key[len(ENV_PREFIX):].lower()
            section = next((s for s in cls.SECTIONS if name.startswith(s + "_")), None)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw.strip()
            if section is None:
                data[name] = value
            else:
                data[section][name[len(section) + 1:]] = value
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        """Create configuration from a JSON file.

        Args:
            path (str): Path to the configuration file

        Returns:
            RunConfig: Configuration object

        Raises:
            ConfigError: If the file is missing, not JSON, or fails validation
        """
        path = Path(path)
        try:
            with path.open("r") as f:
                config_data = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"Configuration file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(config_data)

    def to_dict(self) -> dict:
        """Convert configuration to dictionary.

        Returns:
            dict: Configuration as dictionary
        """
        data = {name: dataclass_to_dict(getattr(self, name)) for name in self.SECTIONS}
        data["diagnostics_path"] = self.diagnostics_path
        return data

    def save(self, path: str) -> None:
        """Save configuration to a JSON file.

        Args:
            path (str): Path where to save the configuration
        """
        path = Path(path)
        if path.parent:
            os.makedirs(path.parent, exist_ok=True)
        with path.open("w") as f:
            json.dump(self.to_dict(), f, indent=2)
