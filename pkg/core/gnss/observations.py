"""GNSS observation containers: per-satellite raw measurements and epochs."""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from core.errors import MeasurementError

# BeiDou B1I
B1I_FREQUENCY = 1561.098e6
B1I_WAVELENGTH = 299792458.0 / B1I_FREQUENCY

PSEUDORANGE_WINDOW = (1e7, 5e7)
SATELLITE_RADIUS_WINDOW = (2e7, 5e7)


@dataclass(frozen=True)
class SatelliteObservation:
    """Raw measurements of one satellite at one epoch.

    Attributes:
        sat_id (str): satellite identifier
        pseudorange (float): code range [m]
        carrier_phase (float): accumulated phase [cycles]
        doppler (Optional[float]): Doppler shift [Hz], None when not reported
        snr (float): carrier-to-noise density [dB-Hz]
        wavelength (float): carrier wavelength [m]
    """

    sat_id: str
    pseudorange: float
    carrier_phase: float
    doppler: Optional[float] = None
    snr: float = 45.0
    wavelength: float = B1I_WAVELENGTH

    def __post_init__(self):
        low, high = PSEUDORANGE_WINDOW
        if not low < self.pseudorange < high:
            raise MeasurementError(
                f"Pseudorange of {self.sat_id} outside the sanity window: {self.pseudorange}"
            )
        if not self.wavelength > 0.0:
            raise MeasurementError(f"Wavelength of {self.sat_id} must be positive")

    @property
    def phase_meters(self) -> float:
        return self.carrier_phase * self.wavelength


@dataclass(frozen=True, eq=False)
class SatelliteState:
    """Precomputed satellite position and correction terms.

    Attributes:
        position_ecef (np.ndarray): transmit-time-corrected position [m]
        clock_error (float): satellite clock error [m]
        tropo_delay (float): tropospheric delay [m]
        iono_delay (float): ionospheric delay [m]
    """

    position_ecef: np.ndarray
    clock_error: float = 0.0
    tropo_delay: float = 0.0
    iono_delay: float = 0.0

    def __post_init__(self):
        pos = np.array(self.position_ecef, dtype=float).reshape(3)
        pos.setflags(write=False)
        object.__setattr__(self, "position_ecef", pos)
        low, high = SATELLITE_RADIUS_WINDOW
        if not low < np.linalg.norm(pos) < high:
            raise MeasurementError(f"Satellite position radius out of range: {np.linalg.norm(pos)}")
        if self.tropo_delay < 0.0 or self.iono_delay < 0.0:
            raise MeasurementError("Atmospheric delays must be non-negative")


@dataclass(frozen=True)
class GnssEpoch:
    """All satellites observed at one receiver epoch."""

    timestamp: float
    observations: Dict[str, SatelliteObservation] = field(default_factory=dict)
    sat_states: Dict[str, SatelliteState] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.observations) - set(self.sat_states)
        if missing:
            raise MeasurementError(
                f"Epoch {self.timestamp}: no satellite state for {sorted(missing)}"
            )

    @classmethod
    def from_pairs(
        cls, timestamp: float, pairs: Iterable[Tuple[SatelliteObservation, SatelliteState]]
    ) -> "GnssEpoch":
        observations, states = {}, {}
        for obs, sat in pairs:
            observations[obs.sat_id] = obs
            states[obs.sat_id] = sat
        return cls(float(timestamp), observations, states)

    @property
    def sat_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(self.observations))

    def __len__(self) -> int:
        return len(self.observations)

    def subset(self, sat_ids: Iterable[str]) -> "GnssEpoch":
        keep = [s for s in sat_ids if s in self.observations]
        return GnssEpoch(
            self.timestamp,
            {s: self.observations[s] for s in keep},
            {s: self.sat_states[s] for s in keep},
        )


@dataclass(frozen=True)
class TdcpMeasurement:
    """Time-differenced carrier phase of one satellite between adjacent epochs.

    Attributes:
        sat_id (str): satellite identifier
        epoch_pair (Tuple[float, float]): (t_k, t_k1)
        delta_phase (float): phase difference [m]
        accepted (Optional[bool]): None until screened for cycle slips
        correction_delta (float): known change of satellite clock and
            atmospheric terms between the epochs [m]
        epsilon (Optional[float]): slip detection metric once screened [m]
    """

    sat_id: str
    epoch_pair: Tuple[float, float]
    delta_phase: float
    accepted: Optional[bool] = None
    correction_delta: float = 0.0
    epsilon: Optional[float] = None

    @property
    def dt(self) -> float:
        return self.epoch_pair[1] - self.epoch_pair[0]
