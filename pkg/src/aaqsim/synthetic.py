"""Seeded synthetic token generators used by tests and the CLI demos."""

from __future__ import annotations

import numpy as np

from .tensors import ActivationTensor


def heavy_tailed_tokens(rng: np.random.Generator, n_tokens: int, hz: int = 128,
                        n_outliers: int = 4, outlier_mag: tuple[float, float] = (10.0, 50.0),
                        inlier_std: float = 1.0) -> np.ndarray:
    """Tokens of Gaussian inliers with a few injected large-magnitude channels.

    Outlier magnitudes are uniform in `outlier_mag` multiples of the inlier
    standard deviation, with random signs and channel positions.
    """
    tokens = rng.normal(0.0, inlier_std, size=(n_tokens, hz))
    for row in tokens:
        pos = rng.choice(hz, size=n_outliers, replace=False)
        mag = rng.uniform(*outlier_mag, size=n_outliers) * inlier_std
        row[pos] = mag * rng.choice([-1.0, 1.0], size=n_outliers)
    return tokens


def random_pair_tensor(rng: np.random.Generator, ns: int, hz: int = 128,
                       scale: float = 1.0, role: str = "") -> ActivationTensor:
    return ActivationTensor(rng.normal(0.0, scale, size=(ns, ns, hz)), role=role)


def mixed_magnitude_tokens(rng: np.random.Generator, n_tokens: int, hz: int = 128) -> np.ndarray:
    """Tokens whose per-token scale spans several orders of magnitude, the
    regime token-wise scaling has to cover."""
    scales = 10.0 ** rng.uniform(-3, 3, size=(n_tokens, 1))
    return rng.normal(0.0, 1.0, size=(n_tokens, hz)) * scales
