from typing import Optional

from core.interface.noise_model import ScalarNoiseModel
from core.robust.gaussian import GaussianNoise
from core.robust.gmm import GmmNoiseModel, GmmWhitener


class NoiseModelFactory:
    """Factory for creating pseudorange noise models."""

    @staticmethod
    def create_noise_model(
        model_type: str, sigma: float = 1.0, gmm: Optional[GmmNoiseModel] = None
    ) -> ScalarNoiseModel:
        """Create the noise model applied to pseudorange residuals.

        Args:
            model_type (str): The model type ("gaussian", "gmm")
            sigma (float): standard deviation of the Gaussian model, also the
                single-component fallback of "gmm" before a mixture is fitted
            gmm (Optional[GmmNoiseModel]): fitted mixture for "gmm"

        Returns:
            ScalarNoiseModel: The noise model

        Raises:
            ValueError: If the model type is unknown
        """
        if model_type == "gaussian":
            return GaussianNoise(sigma)
        elif model_type == "gmm":
            if gmm is None:
                return GaussianNoise(sigma)
            return GmmWhitener(gmm)
        else:
            raise ValueError(f"Unknown noise model type: {model_type}")
