"""Running mean/variance normalization with pooled (parallel) moment updates."""

from __future__ import annotations

import numpy as np


class RunningNormalizer:
    """Per-feature running statistics.

    ``update`` merges a batch with the pooled-moments formula, so updating
    with two batches in turn matches one update with their concatenation.
    """

    def __init__(self, dim, var_floor=1e-8, clip=None):
        self.dim = dim
        self.var_floor = var_floor
        self.clip = clip
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self._m2 = np.zeros(dim)

    def update(self, batch):
        x = np.asarray(batch, dtype=float).reshape(-1, self.dim)
        if len(x) == 0:
            raise ValueError("cannot update statistics with an empty batch")
        n_b = float(len(x))
        mean_b = x.mean(axis=0)
        m2_b = np.square(x - mean_b).sum(axis=0)
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self._m2 = self._m2 + m2_b + np.square(delta) * (self.count * n_b / n)
        self.count = n
        self.var = np.maximum(self._m2 / n, self.var_floor)
        return self

    @property
    def std(self):
        return np.sqrt(self.var)

    def normalize(self, x):
        y = (np.asarray(x, dtype=float) - self.mean) / self.std
        return y if self.clip is None else np.clip(y, -self.clip, self.clip)

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean

    def state_arrays(self, prefix):
        return {f"{prefix}/count": np.array(self.count), f"{prefix}/mean": self.mean,
                f"{prefix}/m2": self._m2, f"{prefix}/var": self.var}

    def load_arrays(self, arrays, prefix):
        self.count = float(arrays[f"{prefix}/count"])
        self.mean = np.array(arrays[f"{prefix}/mean"], dtype=float)
        self._m2 = np.array(arrays[f"{prefix}/m2"], dtype=float)
        self.var = np.array(arrays[f"{prefix}/var"], dtype=float)
        return self
