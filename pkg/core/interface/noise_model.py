from abc import ABC, abstractmethod
from typing import Tuple


class ScalarNoiseModel(ABC):
    """Abstract base class for the noise model of a scalar measurement."""

    name: str = "abstract"

    @abstractmethod
    def whiten(self, residual: float) -> Tuple[float, float]:
        """Map a residual to its whitened value.

        Half the square of the whitened value is the cost of the residual.

        Args:
            residual (float): predicted minus measured value

        Returns:
            Tuple[float, float]: whitened residual and its derivative
            with respect to ``residual``
        """
        pass

    def cost(self, residual: float) -> float:
        s, _ = self.whiten(residual)
        return 0.5 * s * s

    @abstractmethod
    def describe(self) -> dict:
        """Parameters of the model for diagnostics.

        Returns:
            dict: JSON-serializable parameters
        """
        pass
