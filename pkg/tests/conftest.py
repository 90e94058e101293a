import math

import numpy as np
import pytest

from core.backend.state import STATE_DIM, NavState
from core.geodesy.frames import FrameSet, GeodeticPoint
from core.geodesy.rotation import quat_exp
from core.simulator.generator import generate
from core.simulator.scenario import NoiseSpec, RateSpec, Scenario, TrajectorySpec


@pytest.fixture
def temp_workspace(tmp_path):
    """Empty working directory for files written by a test."""
    return tmp_path


@pytest.fixture
def origin():
    return GeodeticPoint(math.radians(30.5), math.radians(114.3), 20.0)


@pytest.fixture
def frames(origin):
    """Frames with a non-trivial lever arm and radar mounting."""
    yaw = math.radians(10.0)
    rotation = np.array([
        [math.cos(yaw), -math.sin(yaw), 0.0],
        [math.sin(yaw), math.cos(yaw), 0.0],
        [0.0, 0.0, 1.0],
    ])
    return FrameSet.from_origin(origin, np.array([0.3, -0.1, 1.2]), rotation)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _random_state(rng, timestamp=0.0, position_scale=50.0) -> NavState:
    return NavState(
        timestamp=timestamp,
        position=rng.normal(size=3) * position_scale,
        velocity=rng.normal(size=3) * 3.0,
        orientation=quat_exp(rng.normal(size=3) * 0.5),
        accel_bias=rng.normal(size=3) * 0.05,
        gyro_bias=rng.normal(size=3) * 0.002,
        clock_bias=100.0 + rng.normal() * 10.0,
        clock_drift=rng.normal() * 0.5,
    )


def _numeric_jacobian(residual, state: NavState, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``residual`` over the 17-dim local increment of ``state``."""
    columns = []
    for i in range(STATE_DIM):
        step = np.zeros(STATE_DIM)
        step[i] = h
        columns.append(
            (np.atleast_1d(residual(state.box_plus(step))) - np.atleast_1d(residual(state.box_plus(-step)))) / (2 * h)
        )
    return np.column_stack(columns)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1.0))


@pytest.fixture
def random_state():
    return _random_state


@pytest.fixture
def numeric_jacobian():
    return _numeric_jacobian


@pytest.fixture
def relative_error():
    return _relative_error


def make_scenario(**overrides) -> Scenario:
    """Short noise-free figure-eight, fields replaceable by keyword."""
    params = dict(
        name="test_figure_eight",
        duration=12.0,
        seed=5,
        trajectory=TrajectorySpec(kind="figure_eight", amplitude=60.0, period=60.0),
        rates=RateSpec(imu_hz=100.0, radar_hz=10.0, gnss_hz=1.0),
        noise=NoiseSpec.noise_free(),
    )
    params.update(overrides)
    return Scenario(**params)


@pytest.fixture
def scenario_factory():
    return make_scenario


@pytest.fixture
def noise_free_scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def noise_free_run():
    """Generated streams of the short noise-free scenario, shared by the session."""
    return generate(make_scenario())
