import math

import numpy as np
import pytest

from core.errors import MeasurementError, PreintegrationError
from core.geodesy.rotation import quat_from_euler, quat_identity, quat_to_matrix
from core.radar.ego_velocity import (
    EgoVelocityEstimate,
    RadarPoint,
    RadarScan,
    RansacParams,
    estimate_ego_velocity,
)
from core.radar.velocity_preintegration import (
    PreintegratedRadarVelocity,
    RadarVelocityIntegrator,
    integrate_velocity,
    velocity_residual,
)


def _scan(rng, v_radar, n=64, outliers=0, noise=0.0, timestamp=0.0, separation=2.0):
    azimuth = rng.uniform(-1.0, 1.0, n)
    elevation = rng.uniform(-0.15, 0.15, n)
    ranges = rng.uniform(5.0, 60.0, n)
    directions = np.column_stack([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    doppler = directions @ np.asarray(v_radar, dtype=float)
    if noise:
        doppler = doppler + rng.normal(0.0, noise, n)
    doppler[:outliers] += rng.choice([-1.0, 1.0], outliers) * rng.uniform(separation, separation + 2.0, outliers)
    return RadarScan.from_arrays(timestamp, directions * ranges[:, None], doppler)


def _estimate(v):
    return EgoVelocityEstimate(np.zeros(2), np.array([v, 0.0, 0.0]), (0, 1), 0.0, True)


class TestRadarScan:
    def test_points_inside_range_gate_are_dropped(self):
        # Act
        scan = RadarScan.from_arrays(0.0, [[0.1, 0.0, 0.0], [10.0, 0.0, 0.0]], [0.0, 1.0])

        # Assert
        assert len(scan) == 1

    def test_non_finite_point_rejected(self):
        with pytest.raises(MeasurementError):
            RadarPoint([np.nan, 1.0, 0.0], 0.0)


class TestEgoVelocity:
    def test_noise_free_scan_recovers_velocity(self, rng):
        # Arrange
        scan = _scan(rng, [4.0, 0.0, 0.0])

        # Act
        estimate = estimate_ego_velocity(scan)

        # Assert
        assert estimate.valid
        np.testing.assert_allclose(estimate.body_velocity, [4.0, 0.0, 0.0], atol=1e-6)
        assert len(estimate.inlier_indices) == len(scan)

    def test_moving_targets_are_rejected(self, rng):
        # Arrange
        scan = _scan(rng, [6.0, 0.0, 0.0], outliers=16)

        # Act
        estimate = estimate_ego_velocity(scan, RansacParams(iterations=200))

        # Assert
        assert estimate.valid
        np.testing.assert_allclose(estimate.body_velocity, [6.0, 0.0, 0.0], atol=1e-6)
        assert not set(range(16)) & set(estimate.inlier_indices)

    def test_mounting_rotation_maps_into_body_frame(self, rng):
        # Arrange
        R_br = quat_to_matrix(quat_from_euler(0.0, 0.0, math.pi / 2))
        v_radar = R_br.T @ np.array([3.0, 0.0, 0.0])
        scan = _scan(rng, v_radar)

        # Act
        estimate = estimate_ego_velocity(scan, rotation_body_from_radar=R_br)

        # Assert
        np.testing.assert_allclose(estimate.body_velocity, [3.0, 0.0, 0.0], atol=1e-6)

    def test_too_few_points_is_invalid(self, rng):
        # Arrange
        scan = _scan(rng, [2.0, 0.0, 0.0], n=5)

        # Act
        estimate = estimate_ego_velocity(scan, RansacParams(min_points=8))

        # Assert
        assert not estimate.valid
        np.testing.assert_array_equal(estimate.body_velocity, np.zeros(3))

    def test_low_consensus_is_invalid(self, rng):
        # Arrange
        scan = _scan(rng, [2.0, 0.0, 0.0], n=40, outliers=30)

        # Act
        estimate = estimate_ego_velocity(scan, RansacParams(min_consensus_fraction=0.4))

        # Assert
        assert not estimate.valid

    def test_result_independent_of_point_order(self, rng):
        # Arrange
        scan = _scan(rng, [5.0, 0.0, 0.0], noise=0.05)
        reversed_scan = RadarScan(scan.timestamp, tuple(reversed(scan.points)))

        # Act
        a = estimate_ego_velocity(scan)
        b = estimate_ego_velocity(reversed_scan)

        # Assert
        np.testing.assert_allclose(a.v2d_radar, b.v2d_radar, atol=1e-12)


class TestVelocityPreintegration:
    def test_constant_velocity_straight_line(self):
        # Arrange
        integrator = RadarVelocityIntegrator()
        estimates = [(0.1 * k, _estimate(2.0)) for k in range(1, 11)]

        # Act
        p = integrator.integrate_interval(0.0, 1.0, estimates, lambda t: quat_identity())

        # Assert
        assert p.dt_total == pytest.approx(1.0)
        np.testing.assert_allclose(p.eta, [2.0, 0.0, 0.0], atol=1e-12)

    def test_no_valid_scan_gives_no_factor(self):
        # Arrange
        integrator = RadarVelocityIntegrator()
        invalid = [(0.5, EgoVelocityEstimate.invalid())]

        # Act & Assert
        assert integrator.integrate_interval(0.0, 1.0, invalid, lambda t: quat_identity()) is None
        assert integrator.integrate_interval(0.0, 1.0, [], lambda t: quat_identity()) is None

    def test_missing_scans_inflate_covariance(self):
        # Arrange
        full = RadarVelocityIntegrator().integrate_interval(
            0.0, 1.0, [(0.5, _estimate(1.0)), (1.0, _estimate(1.0))], lambda t: quat_identity()
        )

        # Act
        partial = RadarVelocityIntegrator().integrate_interval(
            0.0, 1.0, [(0.5, _estimate(1.0)), (1.0, EgoVelocityEstimate.invalid())], lambda t: quat_identity()
        )

        # Assert
        assert np.trace(partial.covariance) > np.trace(full.covariance)

    def test_previous_knot_carries_into_next_interval(self):
        # Arrange
        integrator = RadarVelocityIntegrator()
        integrator.integrate_interval(0.0, 1.0, [(1.0, _estimate(0.0))], lambda t: quat_identity())

        # Act
        p = integrator.integrate_interval(1.0, 2.0, [(2.0, _estimate(2.0))], lambda t: quat_identity())

        # Assert
        np.testing.assert_allclose(p.eta, [1.0, 0.0, 0.0], atol=1e-12)

    def test_non_positive_step_rejected(self):
        with pytest.raises(PreintegrationError):
            integrate_velocity(PreintegratedRadarVelocity.empty(), np.zeros(3), quat_identity(), 0.0)

    def test_residual_zero_at_consistent_states(self, random_state, rng):
        # Arrange
        x0 = random_state(rng, 0.0)
        eta = np.array([3.0, -0.5, 0.1])
        x1 = x0.replace(timestamp=1.0, position=x0.position + x0.rotation @ eta)
        p = PreintegratedRadarVelocity(eta, 1.0, np.eye(3) * 0.01)

        # Act
        r = velocity_residual(p, x0, x1)

        # Assert
        np.testing.assert_allclose(r, np.zeros(3), atol=1e-10)

    def test_jacobians_match_finite_differences(self, rng, random_state, numeric_jacobian, relative_error):
        for _ in range(20):
            # Arrange
            x0 = random_state(rng, 0.0)
            x1 = random_state(rng, 1.0)
            p = PreintegratedRadarVelocity(rng.normal(size=3) * 5.0, 1.0, np.eye(3) * 0.01)

            # Act
            _, (J0, J1) = velocity_residual(p, x0, x1, with_jacobians=True)

            # Assert
            assert relative_error(J0, numeric_jacobian(lambda x: velocity_residual(p, x, x1), x0)) < 1e-5
            assert relative_error(J1, numeric_jacobian(lambda x: velocity_residual(p, x0, x), x1)) < 1e-5


@pytest.mark.slow
class TestEgoVelocityMonteCarlo:
    def test_moving_targets_with_noise(self, rng):
        # Arrange
        errors = []

        # Act
        for _ in range(200):
            v_radar = np.array([rng.uniform(2.0, 15.0), rng.uniform(-1.0, 1.0), 0.0])
            scan = _scan(rng, v_radar, n=64, outliers=25, noise=0.1, separation=1.0)
            estimate = estimate_ego_velocity(scan)
            errors.append(np.linalg.norm(estimate.v2d_radar - v_radar[:2]) if estimate.valid else np.inf)

        # Assert
        assert np.mean(np.array(errors) < 0.25) >= 0.99
