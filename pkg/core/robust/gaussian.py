"""Plain Gaussian noise for scalar measurements."""
from typing import Tuple

from core.interface.noise_model import ScalarNoiseModel


class GaussianNoise(ScalarNoiseModel):
    """Zero-mean Gaussian with standard deviation ``sigma``."""

    name = "gaussian"

    def __init__(self, sigma: float):
        if not sigma > 0.0:
            raise ValueError(f"Noise sigma must be positive, got {sigma}")
        self.sigma = float(sigma)

    def whiten(self, residual: float) -> Tuple[float, float]:
        return residual / self.sigma, 1.0 / self.sigma

    def describe(self) -> dict:
        return {"model": self.name, "sigma": self.sigma}
