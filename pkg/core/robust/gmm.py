"""Two-component Gaussian mixture noise model for pseudorange residuals.

The model is fitted with EM over a rolling window of residuals and used
as an exact sum-mixture cost in the optimizer.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from core.errors import EstimationError, MeasurementError
from core.interface.noise_model import ScalarNoiseModel

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4
COMPONENT_COUNT = 2


@dataclass(frozen=True, eq=False)
class GmmNoiseModel:
    """Two-component 1-D Gaussian mixture.

    Attributes:
        weights (np.ndarray): component weights, summing to one
        means (np.ndarray): component means [m]
        variances (np.ndarray): component variances [m^2]
        iterations (int): EM iterations used for the fit
        log_likelihoods (Tuple[float, ...]): log-likelihood after every EM iteration
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    iterations: int = 0
    log_likelihoods: Tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            arr = np.array(getattr(self, name), dtype=float).reshape(COMPONENT_COUNT)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.weights <= 0.0) or np.any(self.weights >= 1.0):
            raise MeasurementError(f"GMM weights must lie in (0, 1): {self.weights}")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise MeasurementError(f"GMM weights must sum to 1: {self.weights}")
        if np.any(self.variances < VARIANCE_FLOOR * (1.0 - 1e-12)):
            raise MeasurementError(f"GMM variances below the floor: {self.variances}")
        # per-component constants of log(w_j N(r; mu_j, var_j))
        object.__setattr__(self, "_log_norm", np.log(self.weights) - 0.5 * np.log(2.0 * np.pi * self.variances))
        object.__setattr__(self, "_inv_var", 1.0 / self.variances)
        object.__setattr__(
            self, "_scalar", tuple(float(v) for v in (*self.means, *self._log_norm, *self._inv_var))
        )

    @classmethod
    def single(cls, sigma: float, mean: float = 0.0) -> "GmmNoiseModel":
        """Mixture equivalent to one Gaussian N(mean, sigma^2)."""
        return cls([0.5, 0.5], [mean, mean], [sigma ** 2, sigma ** 2])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "iterations": self.iterations,
        }

    def component_log_pdf(self, r) -> np.ndarray:
        """(n, 2) array of log(w_j N(r; mu_j, var_j))."""
        r = np.atleast_1d(np.asarray(r, dtype=float))[:, None]
        return self._log_norm - 0.5 * (r - self.means) ** 2 * self._inv_var

    def log_pdf(self, r) -> np.ndarray:
        return logsumexp(self.component_log_pdf(r), axis=1)

    def cost_terms(self, r: float) -> Tuple[float, float, float]:
        """Log density at a scalar residual with its first and second derivatives of -log p."""
        m0, m1, c0, c1, iv0, iv1 = self._scalar
        d0, d1 = float(r) - m0, float(r) - m1
        a = c0 - 0.5 * d0 * d0 * iv0
        b = c1 - 0.5 * d1 * d1 * iv1
        log_p = float(np.logaddexp(a, b))
        g0 = math.exp(a - log_p)
        g1 = 1.0 - g0
        z0, z1 = d0 * iv0, d1 * iv1
        first = g0 * z0 + g1 * z1
        second = g0 * iv0 + g1 * iv1 - (g0 * z0 * z0 + g1 * z1 * z1 - first * first)
        return log_p, first, second

    def log_likelihood(self, residuals) -> float:
        return float(np.sum(self.log_pdf(residuals)))

    def responsibilities(self, r) -> np.ndarray:
        lp = self.component_log_pdf(r)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def mode(self) -> float:
        """Global maximum of the mixture density."""
        lo, hi = float(self.means.min()), float(self.means.max())
        if hi - lo < 1e-12:
            return lo
        grid = np.linspace(lo, hi, 201)
        best = int(np.argmax(self.log_pdf(grid)))
        a = grid[max(best - 1, 0)]
        b = grid[min(best + 1, len(grid) - 1)]
        result = optimize.minimize_scalar(
            lambda x: -self.cost_terms(x)[0], bounds=(a, b), method="bounded",
            options={"xatol": 1e-12},
        )
        return float(result.x)


def initial_model(residuals: Sequence[float]) -> GmmNoiseModel:
    """Nominal component from the inner 80% of the data, outlier component 10x wider."""
    data = np.asarray(residuals, dtype=float)
    lo, hi = np.quantile(data, [0.1, 0.9])
    inner = data[(data >= lo) & (data <= hi)]
    if inner.size == 0:
        inner = data
    mean = float(inner.mean())
    variance = max(float(inner.var()), VARIANCE_FLOOR)
    return GmmNoiseModel([0.8, 0.2], [mean, mean], [variance, 10.0 * variance])


def fit_gmm(
    residuals: Iterable[float],
    init: Optional[GmmNoiseModel] = None,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> GmmNoiseModel:
    """Fit the mixture with expectation-maximization.

    Args:
        residuals (Iterable[float]): pseudorange residuals [m]
        init (Optional[GmmNoiseModel]): starting model, derived from the data when omitted
        max_iters (int): iteration limit
        tol (float): stop when the log-likelihood gain falls below this

    Returns:
        GmmNoiseModel: fitted model with its log-likelihood history

    Raises:
        MeasurementError: If no residuals are given
    """
    data = np.asarray(list(residuals), dtype=float)
    if data.size == 0:
        raise MeasurementError("Cannot fit a GMM to an empty residual set")
    model = init or initial_model(data)
    history = []
    previous = model.log_likelihood(data)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        gamma = model.responsibilities(data)
        nk = gamma.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / data.size
        weights = np.clip(weights, 1e-9, 1.0 - 1e-9)
        weights = weights / weights.sum()
        means = (gamma * data[:, None]).sum(axis=0) / nk
        variances = (gamma * (data[:, None] - means) ** 2).sum(axis=0) / nk
        if np.any(variances < VARIANCE_FLOOR):
            logger.debug("GMM variance clamped to the floor: %s", variances)
            variances = np.maximum(variances, VARIANCE_FLOOR)
        model = GmmNoiseModel(weights, means, variances)
        current = model.log_likelihood(data)
        history.append(current)
        if current < previous - 1e-9 * max(1.0, abs(previous)):
            raise EstimationError(
                f"GMM log-likelihood decreased at EM iteration {iterations}: {previous:.9g} -> {current:.9g}"
            )
        if abs(current - previous) < tol:
            break
        previous = current
    return GmmNoiseModel(
        model.weights, model.means, model.variances, iterations, tuple(history)
    )


def gmm_cost(residual: float, model: GmmNoiseModel, mode: Optional[float] = None) -> Tuple[float, float]:
    """Negative log mixture density, shifted to zero at the mode.

    Args:
        residual (float): residual [m]
        model (GmmNoiseModel): mixture
        mode (Optional[float]): precomputed mode of the mixture

    Returns:
        Tuple[float, float]: (cost, derivative of the cost w.r.t. the residual)
    """
    m = model.mode() if mode is None else mode
    log_p, gradient_scale, _ = model.cost_terms(residual)
    cost = model.cost_terms(m)[0] - log_p
    return max(cost, 0.0), gradient_scale


class GmmWhitener(ScalarNoiseModel):
    """Maps a residual to ``s`` with ``s^2 / 2`` equal to the mixture cost."""

    name = "gmm"

    def __init__(self, model: GmmNoiseModel):
        self.model = model
        self.mode = model.mode()
        self._peak, _, curvature = model.cost_terms(self.mode)
        self._scale_at_mode = math.sqrt(max(curvature, 0.0))

    def whiten(self, residual: float) -> Tuple[float, float]:
        """Return (s, ds/dr)."""
        log_p, gradient_scale, _ = self.model.cost_terms(residual)
        cost = max(self._peak - log_p, 0.0)
        s = math.copysign(math.sqrt(2.0 * cost), residual - self.mode)
        if abs(s) < 1e-8:
            return (residual - self.mode) * self._scale_at_mode, self._scale_at_mode
        return s, gradient_scale / s

    def describe(self) -> dict:
        return {"model": self.name, "mode": self.mode, **self.model.to_dict()}


class ResidualHistory:
    """Rolling window of predicted-state pseudorange residuals."""

    def __init__(self, window: int = 200, min_count: int = 30):
        self.window = window
        self.min_count = min_count
        self._values = deque(maxlen=window)

    def extend(self, residuals: Iterable[float]) -> None:
        self._values.extend(float(r) for r in residuals if math.isfinite(r))

    def __len__(self) -> int:
        return len(self._values)

    @property
    def ready(self) -> bool:
        return len(self._values) >= self.min_count

    def snapshot(self) -> np.ndarray:
        return np.array(self._values)
