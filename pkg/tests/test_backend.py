import math

import numpy as np
import pytest

from core.backend.factors import (
    ClockDriftFactor,
    ImuFactor,
    MarginalizationFactor,
    PriorFactor,
    PseudorangeFactor,
    RadarVelocityFactor,
    TdcpFactor,
    sqrt_information,
)
from core.backend.initializer import initialize
from core.backend.optimizer import LmSettings, linearize_problem, optimize
from core.backend.problem import FactorSettings, Problem, RobustModels, add_epoch
from core.backend.state import STATE_DIM, LocalIncrement, NavState
from core.errors import EstimationError, InitializationDeferred
from core.gnss.measurement_models import build_tdcp
from core.preintegration.imu_preintegration import ImuPreintegrator, ImuSample, integrate_samples
from core.radar.ego_velocity import estimate_ego_velocity
from core.radar.velocity_preintegration import PreintegratedRadarVelocity, RadarVelocityIntegrator
from core.robust.cycle_slip import screen_tdcp
from core.robust.gaussian import GaussianNoise
from core.robust.gmm import GmmNoiseModel, GmmWhitener
from core.simulator.generator import generate
from core.simulator.scenario import TrajectorySpec

LOOSE_SIGMAS = np.array([10.0] * 3 + [5.0] * 3 + [0.5] * 3 + [0.1] * 3 + [0.01] * 3 + [100.0, 10.0])


def _truth_at(run, t):
    return next(s for s in run.truth if abs(s.timestamp - t) < 1e-9)


def _imu_interval(run, t0, t1):
    return integrate_samples([s for s in run.imu if t0 - 1e-9 <= s.timestamp <= t1 + 1e-9])


def _whitened_jacobian_error(factor, states, numeric_jacobian, relative_error, h=1e-6):
    _, blocks = factor.linearize(states)
    errors = []
    for i, block in enumerate(blocks):
        def residual(x, i=i):
            perturbed = list(states)
            perturbed[i] = x
            return factor.whitened_residual(perturbed)
        errors.append(relative_error(block, numeric_jacobian(residual, states[i], h=h)))
    return max(errors)


def _window(run, end_time, enable_radar=True):
    """Window over the noise-free run, started at the truth state at t=0."""
    settings = FactorSettings(enable_radar=enable_radar)
    problem = Problem(run.frames, capacity=10, settings=settings)
    start = _truth_at(run, 0.0)
    problem.add_state(start)
    problem.add_prior(start, LOOSE_SIGMAS)

    imu = ImuPreintegrator()
    for sample in run.imu:
        imu.add_sample(sample)
    imu.start(0.0)
    radar = RadarVelocityIntegrator()
    estimates = [(scan.timestamp, estimate_ego_velocity(scan, rotation_body_from_radar=run.frames.rotation_body_from_radar))
                 for scan in run.radar]
    previous = run.gnss[0]
    for epoch in run.gnss[1:]:
        if epoch.timestamp > end_time:
            break
        p = imu.finish(epoch.timestamp)
        window = [(t, e) for t, e in estimates if previous.timestamp < t <= epoch.timestamp]
        preint_radar = radar.integrate_interval(previous.timestamp, epoch.timestamp, window, p.rotation_at)
        tdcp = screen_tdcp(build_tdcp(previous, epoch), previous, epoch)
        add_epoch(problem, p, preint_radar, epoch, RobustModels(GaussianNoise(1.0), tdcp, previous))
        previous = epoch
    return problem


class TestLocalIncrement:
    def test_blocks_follow_the_state_layout(self):
        # Arrange
        increment = LocalIncrement(np.arange(STATE_DIM, dtype=float))

        # Assert
        np.testing.assert_array_equal(increment.dp, [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(increment.dtheta, [6.0, 7.0, 8.0])
        np.testing.assert_array_equal(increment.dbg, [12.0, 13.0, 14.0])
        assert increment.dclock == 15.0
        assert increment.ddrift == 16.0

    def test_box_plus_then_box_minus_recovers_increment(self, rng, random_state):
        # Arrange
        state = random_state(rng)
        increment = LocalIncrement(rng.normal(size=STATE_DIM) * 0.1)

        # Act
        moved = state.box_plus(increment)

        # Assert
        np.testing.assert_allclose(moved.box_minus(state), increment.vector, atol=1e-10)
        np.testing.assert_allclose(state.box_plus(LocalIncrement.zero()).box_minus(state), np.zeros(STATE_DIM), atol=1e-12)


class TestFactorJacobians:
    def test_prior(self, rng, random_state, numeric_jacobian, relative_error):
        # Arrange
        anchor = random_state(rng)
        x = anchor.box_plus(rng.normal(size=STATE_DIM) * 0.3)
        factor = PriorFactor(anchor, LOOSE_SIGMAS)

        # Act & Assert
        assert _whitened_jacobian_error(factor, [x], numeric_jacobian, relative_error) < 1e-5

    def test_imu(self, rng, random_state, numeric_jacobian, relative_error, noise_free_run):
        # Arrange
        factor = ImuFactor((0.0, 1.0), _imu_interval(noise_free_run, 0.0, 1.0))
        x0 = random_state(rng, 0.0)
        x1 = x0.box_plus(rng.normal(size=STATE_DIM) * 0.2).replace(timestamp=1.0)

        # Act & Assert
        assert _whitened_jacobian_error(factor, [x0, x1], numeric_jacobian, relative_error) < 1e-5

    def test_radar_velocity(self, rng, random_state, numeric_jacobian, relative_error):
        # Arrange
        factor = RadarVelocityFactor((0.0, 1.0), PreintegratedRadarVelocity(np.array([3.0, 0.2, 0.0]), 1.0, np.eye(3) * 0.02))

        # Act & Assert
        error = _whitened_jacobian_error(factor, [random_state(rng, 0.0), random_state(rng, 1.0)], numeric_jacobian, relative_error)
        assert error < 1e-5

    def test_clock_drift(self, rng, random_state, numeric_jacobian, relative_error):
        # Arrange
        factor = ClockDriftFactor((0.0, 1.0))

        # Act & Assert
        error = _whitened_jacobian_error(factor, [random_state(rng, 0.0), random_state(rng, 1.0)], numeric_jacobian, relative_error)
        assert error < 1e-5

    def test_tdcp(self, rng, random_state, numeric_jacobian, relative_error, noise_free_run):
        # Arrange
        e0, e1 = noise_free_run.gnss[0], noise_free_run.gnss[1]
        m = screen_tdcp(build_tdcp(e0, e1), e0, e1)[0]
        factor = TdcpFactor(m, (e0.sat_states[m.sat_id], e1.sat_states[m.sat_id]), noise_free_run.frames)

        # Act & Assert
        error = _whitened_jacobian_error(
            factor, [random_state(rng, 0.0), random_state(rng, 1.0)], numeric_jacobian, relative_error, h=1e-3
        )
        assert error < 5e-5

    @pytest.mark.parametrize("noise", [
        GaussianNoise(1.0),
        GmmWhitener(GmmNoiseModel([0.7, 0.3], [0.0, 2.0], [1.0, 25.0])),
    ])
    def test_pseudorange(self, noise, noise_free_run, numeric_jacobian, relative_error):
        # Arrange
        epoch = noise_free_run.gnss[1]
        sat_id = epoch.sat_ids[0]
        factor = PseudorangeFactor(1.0, epoch.observations[sat_id], epoch.sat_states[sat_id], noise_free_run.frames, noise)
        x = _truth_at(noise_free_run, 1.0)
        x = x.replace(position=x.position + [4.0, -3.0, 2.0], clock_bias=x.clock_bias + 1.5)

        # Act & Assert
        error = _whitened_jacobian_error(factor, [x], numeric_jacobian, relative_error, h=1e-3)
        assert error < 5e-5

    def test_cost_is_half_squared_whitened_residual(self, rng, random_state):
        # Arrange
        anchor = random_state(rng)
        factor = PriorFactor(anchor, LOOSE_SIGMAS)
        x = anchor.box_plus(rng.normal(size=STATE_DIM) * 0.1)

        # Act
        r = factor.whitened_residual([x])

        # Assert
        assert factor.cost([x]) == pytest.approx(0.5 * float(r @ r))

    def test_sqrt_information_inverts_covariance(self, rng):
        # Arrange
        A = rng.normal(size=(4, 4))
        covariance = A @ A.T + np.eye(4)

        # Act
        L = sqrt_information(covariance)

        # Assert
        np.testing.assert_allclose(L.T @ L, np.linalg.inv(covariance), atol=1e-10)


class TestProblem:
    def test_capacity_must_hold_two_states(self, frames):
        with pytest.raises(ValueError):
            Problem(frames, capacity=1)

    def test_states_must_be_newer(self, frames):
        # Arrange
        problem = Problem(frames)
        problem.add_state(NavState(1.0))

        # Act & Assert
        with pytest.raises(EstimationError):
            problem.add_state(NavState(1.0))

    def test_factor_outside_window_rejected(self, frames):
        # Arrange
        problem = Problem(frames)
        problem.add_state(NavState(0.0))

        # Act & Assert
        with pytest.raises(EstimationError):
            problem.add_factor(ClockDriftFactor((0.0, 1.0)))

    def test_add_epoch_before_initialization(self, noise_free_run):
        # Arrange
        problem = Problem(noise_free_run.frames)

        # Act & Assert
        with pytest.raises(EstimationError):
            add_epoch(problem, _imu_interval(noise_free_run, 0.0, 1.0), None, noise_free_run.gnss[1],
                      RobustModels(GaussianNoise(1.0)))

    def test_factor_counts_per_epoch(self, noise_free_run):
        # Act
        problem = _window(noise_free_run, end_time=2.0)

        # Assert
        sats = len(noise_free_run.gnss[1])
        assert len(problem) == 3
        assert problem.factor_counts() == {
            "prior": 1,
            "imu": 2,
            "clock_drift": 2,
            "radar_velocity": 2,
            "pseudorange": 2 * sats,
            "tdcp": 2 * sats,
        }

    def test_radar_disabled_adds_no_radar_factors(self, noise_free_run):
        # Act
        problem = _window(noise_free_run, end_time=2.0, enable_radar=False)

        # Assert
        assert "radar_velocity" not in problem.factor_counts()

    def test_marginalization_matches_dense_schur_complement(self, noise_free_run):
        # Arrange
        problem = _window(noise_free_run, end_time=3.0)
        H_full, g_full, _ = linearize_problem(problem, problem.states)
        m = STATE_DIM
        expected_H = H_full[m:, m:] - H_full[m:, :m] @ np.linalg.solve(H_full[:m, :m], H_full[:m, m:])
        expected_g = g_full[m:] - H_full[m:, :m] @ np.linalg.solve(H_full[:m, :m], g_full[:m])

        # Act
        removed = problem.marginalize_oldest()
        H, g, _ = linearize_problem(problem, problem.states)

        # Assert
        assert removed.timestamp == 0.0
        assert len(problem) == 3
        assert any(isinstance(f, MarginalizationFactor) for f in problem.factors)
        scale = np.max(np.abs(expected_H))
        np.testing.assert_allclose(H, expected_H, atol=1e-6 * scale)
        np.testing.assert_allclose(g, expected_g, atol=1e-8 * scale)

    def test_marginalizing_empty_window(self, frames):
        with pytest.raises(EstimationError):
            Problem(frames).marginalize_oldest()


def _clock_problem(frames, anchors, initial):
    problem = Problem(frames)
    for state in initial:
        problem.add_state(state)
    for anchor in anchors:
        problem.add_prior(anchor, LOOSE_SIGMAS)
    for a, b in zip(initial[:-1], initial[1:]):
        problem.add_factor(ClockDriftFactor((a.timestamp, b.timestamp), 0.3, 0.05))
    return problem


class TestOptimizer:
    def test_linear_problem_matches_weighted_least_squares(self, frames):
        # Arrange
        clocks = [100.0, 103.0, 104.5]
        drifts = [1.0, 2.0, 0.5]
        anchors = [NavState(float(i), clock_bias=c, clock_drift=d) for i, (c, d) in enumerate(zip(clocks, drifts))]
        initial = [a.replace(clock_bias=a.clock_bias + 20.0, clock_drift=0.0) for a in anchors]
        problem = _clock_problem(frames, anchors, initial)

        # weighted least squares over (c0, d0, c1, d1, c2, d2)
        rows, rhs = [], []
        for i in range(3):
            rows.append(np.eye(6)[2 * i] / 100.0)
            rhs.append(clocks[i] / 100.0)
            rows.append(np.eye(6)[2 * i + 1] / 10.0)
            rhs.append(drifts[i] / 10.0)
        for i in range(2):
            row = np.zeros(6)
            row[2 * i], row[2 * i + 1], row[2 * i + 2] = 1.0, 1.0, -1.0
            rows.append(row / 0.3)
            rhs.append(0.0)
            row = np.zeros(6)
            row[2 * i + 1], row[2 * i + 3] = 1.0, -1.0
            rows.append(row / 0.05)
            rhs.append(0.0)
        expected, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)

        # Act
        states, report = optimize(problem, LmSettings(max_iterations=100, cost_tolerance=1e-15))

        # Assert
        solved = np.array([[s.clock_bias, s.clock_drift] for s in states]).ravel()
        np.testing.assert_allclose(solved, expected, atol=1e-6)
        assert report.final_cost < report.initial_cost
        assert problem.states == states

    def test_solution_is_a_fixed_point(self, noise_free_run):
        # Arrange
        problem = _window(noise_free_run, end_time=3.0)
        first, _ = optimize(problem)

        # Act
        second, report = optimize(problem)

        # Assert
        assert report.final_cost == pytest.approx(report.initial_cost, rel=1e-9, abs=1e-12)
        for a, b in zip(first, second):
            np.testing.assert_allclose(b.box_minus(a), np.zeros(STATE_DIM), atol=1e-6)
        assert report.iterations <= 2
        assert report.termination in ("gradient", "cost")

    def test_noise_free_window_converges_to_truth(self, noise_free_run):
        # Arrange
        problem = _window(noise_free_run, end_time=4.0)

        # Act
        states, report = optimize(problem)

        # Assert
        assert report.termination in ("gradient", "step", "cost")
        for state in states:
            truth = _truth_at(noise_free_run, state.timestamp)
            assert np.linalg.norm(state.position - truth.position) < 1e-2
            assert np.linalg.norm(state.velocity - truth.velocity) < 1e-2

    def test_rank_deficiency_is_reported(self, frames):
        # Arrange
        problem = Problem(frames)
        problem.add_state(NavState(0.0))
        problem.add_state(NavState(1.0))
        problem.add_factor(ClockDriftFactor((0.0, 1.0)))

        # Act
        _, report = optimize(problem)

        # Assert
        assert report.rank_deficient
        assert "unobservable" in report.diagnostic

    def test_empty_window_rejected(self, frames):
        with pytest.raises(EstimationError):
            optimize(Problem(frames))


class TestInitializer:
    def test_initial_state_matches_truth(self, noise_free_run):
        # Arrange
        frames = noise_free_run.frames
        truth = _truth_at(noise_free_run, 0.0)

        # Act
        result = initialize(
            noise_free_run.gnss[:3], noise_free_run.imu, frames.lever_arm_gnss,
            frames.rotation_body_from_radar, frames.enu_origin,
        )

        # Assert
        state = result.state
        assert state.timestamp == 0.0
        np.testing.assert_allclose(state.position, truth.position, atol=1e-3)
        np.testing.assert_allclose(state.velocity, truth.velocity, atol=0.2)
        assert abs(math.remainder(state.euler[2] - truth.euler[2], 2 * math.pi)) < 0.05
        assert abs(state.euler[0]) < 0.05 and abs(state.euler[1]) < 0.05
        assert state.clock_bias == pytest.approx(truth.clock_bias, abs=1e-3)
        assert state.clock_drift == pytest.approx(truth.clock_drift, abs=1e-4)
        assert len(result.fixes) == 3

    def test_origin_defaults_to_first_fix(self, noise_free_run):
        # Act
        result = initialize(noise_free_run.gnss[:2], noise_free_run.imu)

        # Assert
        np.testing.assert_allclose(result.state.position, np.zeros(3), atol=1e-5)

    def test_single_epoch_defers(self, noise_free_run):
        with pytest.raises(InitializationDeferred):
            initialize(noise_free_run.gnss[:1], noise_free_run.imu)

    def test_short_imu_span_defers(self, noise_free_run):
        # Arrange
        imu = [s for s in noise_free_run.imu if s.timestamp < 0.5]

        # Act & Assert
        with pytest.raises(InitializationDeferred):
            initialize(noise_free_run.gnss[:3], imu)

    def test_too_few_satellites_defers(self, noise_free_run):
        # Arrange
        epochs = [e.subset(e.sat_ids[:3]) for e in noise_free_run.gnss[:3]]

        # Act & Assert
        with pytest.raises(InitializationDeferred):
            initialize(epochs, noise_free_run.imu)

    def test_stationary_platform_keeps_zero_yaw(self, scenario_factory):
        # Arrange
        run = generate(scenario_factory(duration=4.0, trajectory=TrajectorySpec(kind="stationary")))

        # Act
        result = initialize(run.gnss[:3], run.imu, enu_origin=run.frames.enu_origin)

        # Assert
        assert result.state.euler[2] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(result.state.velocity, np.zeros(3), atol=1e-6)
