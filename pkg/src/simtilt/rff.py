"""Random Fourier features approximating a Gaussian kernel.

z(x) = sqrt(2/D) * cos(W x + b) with W drawn i.i.d. N(0, 1/T) and phases b
uniform on [0, 2pi), so that z(x) . z(y) ~= exp(-||x - y||^2 / (2 T)).
Smaller temperature T means a sharper locality window.
"""

from __future__ import annotations

import numpy as np


class InvalidDimensionError(ValueError):
    pass


class InvalidTemperatureError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class RFFProjection:
    """Immutable feature map fully determined by (d, D, T, seed)."""

    def __init__(self, input_dim: int, num_features: int,
                 kernel_temperature: float, seed: int):
        if input_dim < 1 or num_features < 1:
            raise InvalidDimensionError("dimensions must be at least 1")
        if kernel_temperature <= 0:
            raise InvalidTemperatureError("kernel temperature must be positive")
        self.input_dim = input_dim
        self.num_features = num_features
        self.kernel_temperature = kernel_temperature
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(
            scale=1.0 / np.sqrt(kernel_temperature),
            size=(num_features, input_dim))
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=num_features)
        self._scale = np.sqrt(2.0 / num_features)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Map a (d,) vector or (n, d) batch into feature space."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected input dim {self.input_dim}, got {x.shape[-1]}")
        return self._scale * np.cos(x @ self.weights.T + self.phases)

    def exact_kernel(self, x: np.ndarray, y: np.ndarray) -> float:
        """The Gaussian kernel this projection approximates."""
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        return float(np.exp(-np.dot(d, d) / (2.0 * self.kernel_temperature)))

    def params(self) -> dict:
        # Persisting these four scalars suffices to reconstruct the map.
        return {"input_dim": self.input_dim, "num_features": self.num_features,
                "kernel_temperature": self.kernel_temperature, "seed": self.seed}

    @classmethod
    def from_params(cls, params: dict) -> "RFFProjection":
        return cls(params["input_dim"], params["num_features"],
                   params["kernel_temperature"], params["seed"])


def new_projection(input_dim: int, num_features: int,
                   kernel_temperature: float, seed: int) -> RFFProjection:
    return RFFProjection(input_dim, num_features, kernel_temperature, seed)
