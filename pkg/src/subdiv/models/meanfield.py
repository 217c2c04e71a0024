"""Mean-field Gaussian family with a fixed variance, usable as assessable inference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True, eq=False)
class GaussianMeanField:
    """Independent normals with per-latent ``mean`` and ``var``."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.broadcast_to(np.asarray(self.var, dtype=float), mean.shape).copy()
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def std(self):
        return np.sqrt(self.var)

    def sample(self, data, rng):
        return self.mean + self.std * rng.standard_normal(self.mean.size)

    def log_density(self, z, data=None):
        return float(np.sum(norm.logpdf(np.asarray(z, dtype=float), self.mean, self.std)))
