"""Line-delimited JSON dataset records.

Each line is one object with ``type`` and ``t``; the payload mirrors the
in-memory sensor types. Records are sorted by time, ties broken by
``meta < imu < radar_scan < gnss_epoch < ground_truth``.
"""
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional

import numpy as np

from core.backend.state import NavState
from core.errors import DatasetError, FusionError
from core.geodesy.frames import FrameSet
from core.gnss.observations import GnssEpoch, SatelliteObservation, SatelliteState
from core.io.trajectory_file import write_trajectory
from core.preintegration.imu_preintegration import ImuSample
from core.radar.ego_velocity import RadarScan
from core.simulator.generator import SimulationResult

logger = logging.getLogger(__name__)

TYPE_ORDER = {"meta": 0, "imu": 1, "radar_scan": 2, "gnss_epoch": 3, "ground_truth": 4}
DATASET_FILE = "dataset.jsonl"
TRUTH_FILE = "truth.csv"


@dataclass(frozen=True)
class DatasetRecord:
    """One decoded record.

    Attributes:
        type (str): record type
        t (float): timestamp [s]
        payload (Any): ImuSample, RadarScan, GnssEpoch, NavState or a metadata dict
    """

    type: str
    t: float
    payload: Any


def _list(v: np.ndarray) -> list:
    return [float(x) for x in np.asarray(v).reshape(-1)]


def encode(record: DatasetRecord) -> dict:
    p = record.payload
    out = {"type": record.type, "t": float(record.t)}
    if record.type == "meta":
        out.update(p)
    elif record.type == "imu":
        out.update(accel=_list(p.accel), gyro=_list(p.gyro))
    elif record.type == "radar_scan":
        out["points"] = [[*_list(pt.position), float(pt.doppler)] for pt in p.points]
    elif record.type == "gnss_epoch":
        sats = []
        for sat_id in p.sat_ids:
            obs, sat = p.observations[sat_id], p.sat_states[sat_id]
            sats.append({
                "sat_id": sat_id,
                "pseudorange": float(obs.pseudorange),
                "carrier_phase": float(obs.carrier_phase),
                "doppler": None if obs.doppler is None else float(obs.doppler),
                "snr": float(obs.snr),
                "wavelength": float(obs.wavelength),
                "position_ecef": _list(sat.position_ecef),
                "clock_error": float(sat.clock_error),
                "tropo_delay": float(sat.tropo_delay),
                "iono_delay": float(sat.iono_delay),
            })
        out["satellites"] = sats
    elif record.type == "ground_truth":
        out["state"] = [float(x) for x in p.to_row()[1:]]
    else:
        raise DatasetError(f"Cannot encode record type {record.type!r}")
    return out


def decode(obj: dict) -> Optional[DatasetRecord]:
    """Decode one JSON object; unknown types give None.

    Raises:
        KeyError, TypeError, ValueError, FusionError: on malformed payloads
    """
    kind = obj["type"]
    t = float(obj["t"])
    if kind == "meta":
        payload = {k: v for k, v in obj.items() if k not in ("type", "t")}
    elif kind == "imu":
        payload = ImuSample(t, obj["accel"], obj["gyro"])
    elif kind == "radar_scan":
        points = np.asarray(obj["points"], dtype=float).reshape(-1, 4)
        payload = RadarScan.from_arrays(t, points[:, :3], points[:, 3])
    elif kind == "gnss_epoch":
        pairs = []
        for s in obj["satellites"]:
            obs = SatelliteObservation(
                sat_id=str(s["sat_id"]),
                pseudorange=float(s["pseudorange"]),
                carrier_phase=float(s["carrier_phase"]),
                doppler=None if s.get("doppler") is None else float(s["doppler"]),
                snr=float(s.get("snr", 45.0)),
                wavelength=float(s["wavelength"]),
            )
            sat = SatelliteState(
                s["position_ecef"],
                float(s.get("clock_error", 0.0)),
                float(s.get("tropo_delay", 0.0)),
                float(s.get("iono_delay", 0.0)),
            )
            pairs.append((obs, sat))
        payload = GnssEpoch.from_pairs(t, pairs)
    elif kind == "ground_truth":
        v = [float(x) for x in obj["state"]]
        if len(v) != 18:
            raise ValueError("ground_truth state needs 18 values")
        payload = NavState(t, v[0:3], v[3:6], v[6:10], v[10:13], v[13:16], v[16], v[17])
    else:
        return None
    return DatasetRecord(kind, t, payload)


def sort_records(records: Iterable[DatasetRecord]) -> List[DatasetRecord]:
    return sorted(records, key=lambda r: (r.t, TYPE_ORDER.get(r.type, len(TYPE_ORDER))))


def write_dataset(path: str, records: Iterable[DatasetRecord]) -> int:
    """Write records sorted by time; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in sort_records(records):
            f.write(json.dumps(encode(record), separators=(",", ":")))
            f.write("\n")
            count += 1
    return count


def frames_metadata(frames: FrameSet) -> dict:
    origin = frames.enu_origin
    return {
        "enu_origin": [math.degrees(origin.latitude), math.degrees(origin.longitude), float(origin.height)],
        "lever_arm_gnss": _list(frames.lever_arm_gnss),
        "rotation_body_from_radar": np.asarray(frames.rotation_body_from_radar, dtype=float).tolist(),
    }


def simulation_records(result: SimulationResult) -> List[DatasetRecord]:
    """Sensor records of a simulation run, headed by its metadata."""
    meta = {
        "scenario": result.scenario.name,
        "seed": result.scenario.seed,
        **frames_metadata(result.frames),
    }
    records = [DatasetRecord("meta", 0.0, meta)]
    records += [DatasetRecord("imu", s.timestamp, s) for s in result.imu]
    records += [DatasetRecord("radar_scan", s.timestamp, s) for s in result.radar]
    records += [DatasetRecord("gnss_epoch", e.timestamp, e) for e in result.gnss]
    return records


def write_simulation(out_dir: str, result: SimulationResult) -> Dict[str, int]:
    """Write ``dataset.jsonl`` and the ground-truth ``truth.csv`` into ``out_dir``.

    Returns:
        Dict[str, int]: number of records per type, plus truth rows
    """
    out_dir = Path(out_dir)
    records = simulation_records(result)
    write_dataset(out_dir / DATASET_FILE, records)
    write_trajectory(out_dir / TRUTH_FILE, result.truth)
    counts = dict(Counter(r.type for r in records))
    counts["ground_truth"] = len(result.truth)
    logger.info("Wrote %d records and %d truth rows to %s", len(records), len(result.truth), out_dir)
    return counts


def read_dataset(path: str) -> Iterator[DatasetRecord]:
    """Stream records from a dataset file.

    Raises:
        DatasetError: On unreadable files, malformed or out-of-order records,
            naming the 1-based line number
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset file not found: {path}")
    last_t = -np.inf
    with path.open("r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not an object")
                record = decode(obj)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: truncated or invalid record ({exc.msg})", line_number) from exc
            except (KeyError, TypeError, ValueError, FusionError) as exc:
                raise DatasetError(f"{path}: malformed record: {exc}", line_number) from exc
            if record is None:
                logger.warning("%s:%d: skipping unknown record type %r", path, line_number, obj.get("type"))
                continue
            if record.t < last_t:
                raise DatasetError(f"{path}: records are not sorted by time", line_number)
            last_t = record.t
            yield record
