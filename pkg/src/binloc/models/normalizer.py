from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-6


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def fit_normalizer(x) -> Normalizer:
    """Per-dimension mean and (floored) standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (n, D) array")
    if x.shape[0] < 2:
        raise ValueError("need at least two frames to estimate a spread")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return Normalizer(mean, std)
