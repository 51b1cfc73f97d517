"""Seeded synthetic datasets."""

import numpy as np

from bahash.data import FeatureMatrix


def gaussian_blobs(dims: int, n: int, clusters: int = 10, seed: int = 0,
                   spread: float = 1.0, separation: float = 3.0) -> FeatureMatrix:
    """Isotropic Gaussian clusters around random centers, ``(D, N)`` columns."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=separation, size=(dims, clusters))
    labels = rng.integers(0, clusters, size=n)
    X = centers[:, labels] + rng.normal(scale=spread, size=(dims, n))
    return FeatureMatrix(X)


def axis_gaussian(dims: int, n: int, seed: int = 0) -> FeatureMatrix:
    """Zero-mean Gaussian with distinct per-axis standard deviations ``dims..1``."""
    rng = np.random.default_rng(seed)
    scales = np.arange(dims, 0, -1, dtype=np.float64)
    return FeatureMatrix(scales[:, None] * rng.normal(size=(dims, n)))
