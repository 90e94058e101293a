import numpy as np
import pytest

from core.errors import EstimationError, MeasurementError
from core.robust.gaussian import GaussianNoise
from core.robust.gmm import (
    VARIANCE_FLOOR,
    GmmNoiseModel,
    GmmWhitener,
    ResidualHistory,
    fit_gmm,
    gmm_cost,
)


@pytest.fixture
def contaminated(rng):
    """0.7 N(0, 1) + 0.3 N(0, 25)."""
    n = 5000
    nominal = rng.random(n) < 0.7
    return np.where(nominal, rng.normal(0.0, 1.0, n), rng.normal(0.0, 5.0, n))


class TestGmmFit:
    def test_recovers_mixture_parameters(self, contaminated):
        # Act
        model = fit_gmm(contaminated)

        # Assert
        narrow = int(np.argmin(model.variances))
        wide = 1 - narrow
        assert model.weights[narrow] == pytest.approx(0.7, abs=0.1)
        assert model.variances[narrow] == pytest.approx(1.0, rel=0.25)
        assert model.variances[wide] == pytest.approx(25.0, rel=0.25)
        assert model.weights.sum() == pytest.approx(1.0)

    def test_log_likelihood_is_monotone(self, contaminated):
        # Act
        model = fit_gmm(contaminated, max_iters=50, tol=0.0)

        # Assert
        history = np.array(model.log_likelihoods)
        assert len(history) == model.iterations
        assert np.all(np.diff(history) >= -1e-9 * np.abs(history[1:]))

    def test_log_likelihood_decrease_raises(self, contaminated, mocker):
        # Arrange
        mocker.patch.object(GmmNoiseModel, "log_likelihood", side_effect=[-100.0, -90.0, -120.0])

        # Act & Assert
        with pytest.raises(EstimationError, match="decreased"):
            fit_gmm(contaminated, max_iters=5, tol=0.0)

    def test_variance_floor_on_degenerate_data(self):
        # Act
        model = fit_gmm([0.5] * 40)

        # Assert
        assert np.all(model.variances >= VARIANCE_FLOOR * (1.0 - 1e-12))

    def test_empty_input_rejected(self):
        with pytest.raises(MeasurementError):
            fit_gmm([])

    def test_invalid_weights_rejected(self):
        with pytest.raises(MeasurementError):
            GmmNoiseModel([0.6, 0.6], [0.0, 0.0], [1.0, 1.0])


class TestGmmCost:
    def test_symmetric_mixture_cost_is_even_and_non_negative(self):
        # Arrange
        model = GmmNoiseModel([0.7, 0.3], [0.0, 0.0], [1.0, 25.0])

        for r in (0.0, 0.3, 1.7, 4.0, 12.0):
            # Act
            plus, _ = gmm_cost(r, model)
            minus, _ = gmm_cost(-r, model)

            # Assert
            assert plus >= 0.0
            assert plus == pytest.approx(minus, abs=1e-9)

    def test_gradient_matches_finite_differences(self):
        # Arrange
        model = GmmNoiseModel([0.6, 0.4], [0.2, -1.0], [0.8, 16.0])
        mode = model.mode()
        h = 1e-6

        for r in (-6.0, -1.0, 0.5, 2.5, 9.0):
            # Act
            _, gradient = gmm_cost(r, model, mode)
            numeric = (gmm_cost(r + h, model, mode)[0] - gmm_cost(r - h, model, mode)[0]) / (2 * h)

            # Assert
            assert gradient == pytest.approx(numeric, rel=1e-5, abs=1e-7)

    def test_scalar_terms_match_vector_density(self):
        # Arrange
        model = GmmNoiseModel([0.6, 0.4], [0.2, -1.0], [0.8, 16.0])
        h = 1e-5

        for r in (-7.0, -0.4, 0.0, 1.3, 11.0):
            # Act
            log_p, first, second = model.cost_terms(r)
            numeric_first = -(model.log_pdf(r + h)[0] - model.log_pdf(r - h)[0]) / (2 * h)
            numeric_second = -(model.log_pdf(r + h)[0] - 2 * model.log_pdf(r)[0] + model.log_pdf(r - h)[0]) / h ** 2

            # Assert
            assert log_p == pytest.approx(model.log_pdf(r)[0], rel=1e-12)
            assert first == pytest.approx(numeric_first, rel=1e-6, abs=1e-8)
            assert second == pytest.approx(numeric_second, rel=1e-3, abs=1e-4)

    def test_outliers_are_down_weighted(self):
        # Arrange
        mixture = GmmWhitener(GmmNoiseModel([0.7, 0.3], [0.0, 0.0], [1.0, 25.0]))
        gaussian = GaussianNoise(1.0)

        # Act
        large = 20.0

        # Assert
        assert mixture.cost(large) < 0.5 * gaussian.cost(large)

    def test_single_component_matches_gaussian(self):
        # Arrange
        whitener = GmmWhitener(GmmNoiseModel.single(2.0))
        gaussian = GaussianNoise(2.0)

        for r in (-3.0, 0.1, 5.0):
            # Act & Assert
            assert whitener.cost(r) == pytest.approx(gaussian.cost(r), rel=1e-9)


class TestGmmWhitener:
    def test_whitened_square_is_twice_the_cost(self):
        # Arrange
        model = GmmNoiseModel([0.7, 0.3], [0.1, 0.5], [1.0, 25.0])
        whitener = GmmWhitener(model)

        for r in (-8.0, -0.5, 0.4, 3.0):
            # Act
            s, _ = whitener.whiten(r)
            cost, _ = gmm_cost(r, model, whitener.mode)

            # Assert
            assert 0.5 * s * s == pytest.approx(cost, rel=1e-9, abs=1e-12)

    def test_derivative_matches_finite_differences(self):
        # Arrange
        whitener = GmmWhitener(GmmNoiseModel([0.7, 0.3], [0.0, 0.0], [1.0, 25.0]))
        h = 1e-6

        for r in (-5.0, -0.7, 0.9, 6.0):
            # Act
            _, derivative = whitener.whiten(r)
            numeric = (whitener.whiten(r + h)[0] - whitener.whiten(r - h)[0]) / (2 * h)

            # Assert
            assert derivative == pytest.approx(numeric, rel=1e-5)

    def test_continuous_at_the_mode(self):
        # Arrange
        whitener = GmmWhitener(GmmNoiseModel([0.7, 0.3], [0.0, 0.0], [1.0, 25.0]))

        # Act
        s_at, d_at = whitener.whiten(whitener.mode)
        s_near, d_near = whitener.whiten(whitener.mode + 1e-5)

        # Assert
        assert s_at == pytest.approx(0.0, abs=1e-12)
        assert d_at == pytest.approx(d_near, rel=1e-3)

    def test_describe_lists_parameters(self):
        # Act
        described = GmmWhitener(GmmNoiseModel.single(1.5)).describe()

        # Assert
        assert described["model"] == "gmm"
        assert set(described) >= {"mode", "weights", "means", "variances"}


class TestGaussianNoise:
    def test_whitening_divides_by_sigma(self):
        # Act
        s, ds = GaussianNoise(2.0).whiten(3.0)

        # Assert
        assert s == pytest.approx(1.5)
        assert ds == pytest.approx(0.5)

    def test_non_positive_sigma_rejected(self):
        with pytest.raises(ValueError):
            GaussianNoise(0.0)


class TestResidualHistory:
    def test_window_is_bounded(self):
        # Arrange
        history = ResidualHistory(window=5, min_count=3)

        # Act
        history.extend(range(10))

        # Assert
        assert len(history) == 5
        np.testing.assert_array_equal(history.snapshot(), [5, 6, 7, 8, 9])

    def test_ready_after_min_count_and_ignores_non_finite(self):
        # Arrange
        history = ResidualHistory(window=10, min_count=3)

        # Act
        history.extend([1.0, float("nan"), 2.0])

        # Assert
        assert not history.ready
        history.extend([3.0])
        assert history.ready


@pytest.mark.slow
class TestGmmFitMonteCarlo:
    def test_recovery_on_large_sample(self, rng):
        # Arrange
        n = 10_000
        nominal = rng.random(n) < 0.7
        samples = np.where(nominal, rng.normal(0.0, 1.0, n), rng.normal(0.0, 5.0, n))

        # Act
        model = fit_gmm(samples, max_iters=100)

        # Assert
        narrow = int(np.argmin(model.variances))
        wide = 1 - narrow
        assert model.weights[narrow] == pytest.approx(0.7, abs=0.05)
        assert np.sqrt(model.variances[narrow]) == pytest.approx(1.0, rel=0.1)
        assert np.sqrt(model.variances[wide]) == pytest.approx(5.0, rel=0.1)
        history = np.array(model.log_likelihoods)
        assert np.all(np.diff(history) >= -1e-9 * np.abs(history[1:]))
