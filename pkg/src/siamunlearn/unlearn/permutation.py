"""Adaptive label permutation by K-ary randomized response.

For a class with forgotten fraction ``r``, the true label is kept with
probability ``(1/r) / (1/r + K - 1)`` and each other class is emitted with
``1 / (1/r + K - 1)``. Multiplying through by ``r`` gives the form used
here, ``1 / (1 + r(K-1))``, which is also the correct limit (always keep)
at ``r = 0``. ``r = 1`` makes the output uniform over all K classes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def keep_probability(ratio, class_count: int) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=np.float64)
    return 1.0 / (1.0 + ratio * (class_count - 1))


def transition_matrix(ratios, class_count: int) -> np.ndarray:
    """Row ``k`` is the output distribution for true label ``k``."""
    keep = keep_probability(ratios, class_count)
    other = (1.0 - keep) / (class_count - 1)
    mat = np.repeat(other[:, None], class_count, axis=1)
    np.fill_diagonal(mat, keep)
    return mat


class PermutationSampler:
    def __init__(self, ratios, class_count: int, rng: np.random.Generator | int = 0):
        ratios = np.asarray(ratios, dtype=np.float64)
        if class_count < 2:
            raise ConfigError(f"class_count must be at least 2, got {class_count}")
        if ratios.shape != (class_count,):
            raise ConfigError(f"expected {class_count} ratios, got shape {ratios.shape}")
        if np.any((ratios < 0) | (ratios > 1)):
            raise ConfigError("ratios must lie in [0, 1]")
        self.ratios = ratios
        self.class_count = class_count
        self.keep = keep_probability(ratios, class_count)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def probabilities(self, label: int) -> np.ndarray:
        return transition_matrix(self.ratios, self.class_count)[label]

    def sample(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if np.any((labels < 0) | (labels >= self.class_count)):
            raise IndexError(f"labels must lie in [0, {self.class_count})")
        u = self.rng.random(labels.shape)
        # uniform over the K-1 other classes
        offset = self.rng.integers(1, self.class_count, size=labels.shape)
        moved = (labels + offset) % self.class_count
        return np.where(u < self.keep[labels], labels, moved)


def permute_label(sampler: PermutationSampler, label: int) -> int:
    return int(sampler.sample(np.array([label]))[0])


def random_wrong_labels(labels, class_count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over the K-1 classes that differ from each true label."""
    labels = np.asarray(labels, dtype=np.int64)
    return (labels + rng.integers(1, class_count, size=labels.shape)) % class_count
