"""Frame conventions and coordinate conversions (WGS-84 ECEF / geodetic / ENU)."""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from core.errors import ConfigError, GeometryError
from core.geodesy.rotation import is_rotation_matrix

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_B = WGS84_A * math.sqrt(1.0 - WGS84_E2)
OMEGA_EARTH = 7.2921151467e-5
SPEED_OF_LIGHT = 299792458.0


def _wrap_longitude(lon: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(lon + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GeodeticPoint:
    """WGS-84 geodetic coordinates.

    Attributes:
        latitude (float): radians, |latitude| <= pi/2
        longitude (float): radians, wrapped to (-pi, pi]
        height (float): meters above the ellipsoid
    """

    latitude: float
    longitude: float
    height: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.latitude, self.longitude, self.height)):
            raise GeometryError(f"Non-finite geodetic coordinates: {self}")
        if abs(self.latitude) > math.pi / 2 + 1e-15:
            raise GeometryError(f"Latitude out of range: {self.latitude}")
        object.__setattr__(self, "longitude", _wrap_longitude(self.longitude))


def geodetic_to_ecef(p: GeodeticPoint) -> np.ndarray:
    """Closed-form WGS-84 geodetic to ECEF conversion."""
    sin_lat, cos_lat = math.sin(p.latitude), math.cos(p.latitude)
    sin_lon, cos_lon = math.sin(p.longitude), math.cos(p.longitude)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array([
        (n + p.height) * cos_lat * cos_lon,
        (n + p.height) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + p.height) * sin_lat,
    ])


def ecef_to_geodetic(p_ecef: np.ndarray) -> GeodeticPoint:
    """Iterative ECEF to geodetic conversion, converged well below a micrometer."""
    x, y, z = (float(c) for c in p_ecef)
    r_xy = math.hypot(x, y)
    lon = math.atan2(y, x)
    if r_xy < 1e-9:
        lat = math.copysign(math.pi / 2, z) if z != 0.0 else 0.0
        return GeodeticPoint(lat, lon, abs(z) - WGS84_B)

    lat = math.atan2(z, r_xy * (1.0 - WGS84_E2))
    height = 0.0
    for _ in range(20):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        height = r_xy / math.cos(lat) - n
        new_lat = math.atan2(z, r_xy * (1.0 - WGS84_E2 * n / (n + height)))
        if abs(new_lat - lat) < 1e-15:
            lat = new_lat
            break
        lat = new_lat
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    # height from the better-conditioned component
    if abs(lat) < math.pi / 4:
        height = r_xy / math.cos(lat) - n
    else:
        height = z / sin_lat - n * (1.0 - WGS84_E2)
    return GeodeticPoint(lat, lon, height)


def rotation_ecef_from_enu(origin: GeodeticPoint) -> np.ndarray:
    """Columns are the local east, north and up unit vectors in ECEF."""
    sin_lat, cos_lat = math.sin(origin.latitude), math.cos(origin.latitude)
    sin_lon, cos_lon = math.sin(origin.longitude), math.cos(origin.longitude)
    return np.array([
        [-sin_lon, -sin_lat * cos_lon, cos_lat * cos_lon],
        [cos_lon, -sin_lat * sin_lon, cos_lat * sin_lon],
        [0.0, cos_lat, sin_lat],
    ])


@dataclass(frozen=True, eq=False)
class FrameSet:
    """Fixed frame relations used by every measurement model.

    Attributes:
        enu_origin (GeodeticPoint): origin of the navigation (ENU) frame
        rotation_ecef_from_enu (np.ndarray): 3x3, maps ENU vectors to ECEF
        lever_arm_gnss (np.ndarray): antenna offset from the IMU, body frame [m]
        rotation_body_from_radar (np.ndarray): 3x3, maps radar vectors to body
    """

    enu_origin: GeodeticPoint
    rotation_ecef_from_enu: np.ndarray
    lever_arm_gnss: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation_body_from_radar: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin_ecef: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("rotation_ecef_from_enu", "rotation_body_from_radar"):
            R = np.array(getattr(self, name), dtype=float)
            if not is_rotation_matrix(R):
                raise ConfigError(f"{name} is not a proper rotation matrix")
            R.setflags(write=False)
            object.__setattr__(self, name, R)
        lever = np.array(self.lever_arm_gnss, dtype=float).reshape(3)
        if not np.all(np.isfinite(lever)):
            raise ConfigError("lever_arm_gnss must be finite")
        lever.setflags(write=False)
        object.__setattr__(self, "lever_arm_gnss", lever)
        origin = geodetic_to_ecef(self.enu_origin)
        origin.setflags(write=False)
        object.__setattr__(self, "origin_ecef", origin)

    @classmethod
    def from_origin(
        cls,
        origin: GeodeticPoint,
        lever_arm_gnss: Optional[np.ndarray] = None,
        rotation_body_from_radar: Optional[np.ndarray] = None,
    ) -> "FrameSet":
        """Build a FrameSet whose ENU frame is tangent at ``origin``."""
        return cls(
            enu_origin=origin,
            rotation_ecef_from_enu=rotation_ecef_from_enu(origin),
            lever_arm_gnss=np.zeros(3) if lever_arm_gnss is None else lever_arm_gnss,
            rotation_body_from_radar=(
                np.eye(3) if rotation_body_from_radar is None else rotation_body_from_radar
            ),
        )


def ecef_to_enu(p_ecef: np.ndarray, frames: FrameSet) -> np.ndarray:
    return frames.rotation_ecef_from_enu.T @ (np.asarray(p_ecef, dtype=float) - frames.origin_ecef)


def enu_to_ecef(p_enu: np.ndarray, frames: FrameSet) -> np.ndarray:
    return frames.origin_ecef + frames.rotation_ecef_from_enu @ np.asarray(p_enu, dtype=float)


def sagnac_correction(p_sat_ecef: np.ndarray, p_rcv_ecef: np.ndarray) -> float:
    """Earth-rotation range correction (omega_e / c) (x_s y_r - y_s x_r) in meters."""
    return OMEGA_EARTH / SPEED_OF_LIGHT * (
        p_sat_ecef[0] * p_rcv_ecef[1] - p_sat_ecef[1] * p_rcv_ecef[0]
    )


def sagnac_gradient(p_sat_ecef: np.ndarray) -> np.ndarray:
    """Gradient of :func:`sagnac_correction` with respect to the receiver position."""
    return OMEGA_EARTH / SPEED_OF_LIGHT * np.array([-p_sat_ecef[1], p_sat_ecef[0], 0.0])


def elevation_azimuth(p_sat_ecef: np.ndarray, p_rcv_ecef: np.ndarray) -> Tuple[float, float]:
    """Elevation and azimuth (radians) of a satellite seen from a receiver.

    Raises:
        GeometryError: If satellite and receiver coincide
    """
    los = np.asarray(p_sat_ecef, dtype=float) - np.asarray(p_rcv_ecef, dtype=float)
    distance = np.linalg.norm(los)
    if distance < 1e-6:
        raise GeometryError("Satellite and receiver positions coincide")
    R = rotation_ecef_from_enu(ecef_to_geodetic(p_rcv_ecef))
    e, n, u = R.T @ (los / distance)
    elevation = math.asin(max(-1.0, min(1.0, u)))
    azimuth = math.atan2(e, n) % (2.0 * math.pi)
    return elevation, azimuth
