"""Independent reference computations and fixtures shared by the tests.

The op registry pairs every differentiable tensor operation with a
generator of well-conditioned random inputs (away from kinks, poles and
zero norms) for the finite-difference checks.
"""

from __future__ import annotations

import math

import numpy as np

from siamunlearn.core import tensor as T

# ------------------------------------------------------------ op registry


def _away_from_zero(rng, shape, low=0.1):
    x = rng.uniform(low, 2.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _labels(rng, m, k):
    return rng.integers(0, k, m)


def _ops():
    ops = {}

    def reg(name, fn, gen):
        ops[name] = (fn, gen)

    reg("add", lambda a, b: a + b, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))])
    reg("add_broadcast", lambda a, b: a + b, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4,))])
    reg("sub", lambda a, b: a - b, lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 4))])
    reg("mul", lambda a, b: a * b, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))])
    reg("div", lambda a, b: a / b, lambda r: [r.standard_normal((3, 4)), _away_from_zero(r, (3, 4), 0.5)])
    reg("neg", lambda a: -a, lambda r: [r.standard_normal((5,))])
    reg("exp", T.exp, lambda r: [r.uniform(-2, 2, (3, 4))])
    reg("log", T.log, lambda r: [r.uniform(0.2, 3.0, (3, 4))])
    reg("sqrt", T.sqrt, lambda r: [r.uniform(0.2, 3.0, (3, 4))])
    reg("relu", T.relu, lambda r: [_away_from_zero(r, (3, 4), 0.01)])
    reg("sum", lambda a: T.sum_(a, axis=1), lambda r: [r.standard_normal((3, 4))])
    reg("sum_all", lambda a: T.sum_(a), lambda r: [r.standard_normal((3, 4))])
    reg("mean", lambda a: T.mean(a, axis=0, keepdims=True), lambda r: [r.standard_normal((3, 4))])
    reg("reshape", lambda a: T.reshape(a, (4, 3)), lambda r: [r.standard_normal((3, 4))])
    reg("transpose", lambda a: T.transpose(a), lambda r: [r.standard_normal((3, 4))])
    reg("flatten", T.flatten, lambda r: [r.standard_normal((2, 3, 2, 2))])
    reg("matmul", T.matmul, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))])
    reg("linear", T.linear,
        lambda r: [r.standard_normal((3, 4)), r.standard_normal((2, 4)), r.standard_normal((2,))])
    reg("log_softmax", T.log_softmax, lambda r: [r.standard_normal((3, 5)) * 2])
    reg("cross_entropy", lambda z: T.softmax_cross_entropy(z, np.array([0, 4, 2])),
        lambda r: [r.standard_normal((3, 5)) * 2])
    reg("cosine_distance", T.cosine_distance,
        lambda r: [r.standard_normal((3, 4)) + 0.1, r.standard_normal((3, 4)) + 0.1])
    reg("conv2d", lambda x, k, b: T.conv2d(x, k, b, stride=1, padding=1),
        lambda r: [r.standard_normal((2, 2, 4, 4)), r.standard_normal((3, 2, 3, 3)), r.standard_normal((3,))])
    reg("conv2d_stride2", lambda x, k: T.conv2d(x, k, None, stride=2, padding=0),
        lambda r: [r.standard_normal((2, 1, 5, 5)), r.standard_normal((2, 1, 3, 3))])
    reg("avg_pool2d", lambda x: T.avg_pool2d(x, 2), lambda r: [r.standard_normal((2, 2, 4, 4))])
    reg("batch_norm_train",
        lambda x, g, b: T.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True),
        lambda r: [r.standard_normal((4, 3)) * 2 + 1, r.uniform(0.5, 1.5, 3), r.standard_normal(3)])
    reg("batch_norm_train_4d",
        lambda x, g, b: T.batch_norm(x, g, b, np.zeros(2), np.ones(2), training=True),
        lambda r: [r.standard_normal((3, 2, 2, 2)), r.uniform(0.5, 1.5, 2), r.standard_normal(2)])
    reg("batch_norm_eval",
        lambda x, g, b: T.batch_norm(x, g, b, np.full(3, 0.3), np.full(3, 2.0), training=False),
        lambda r: [r.standard_normal((4, 3)), r.uniform(0.5, 1.5, 3), r.standard_normal(3)])
    return ops


OPS = _ops()


# ------------------------------------------------------------ closed forms

def rr_keep_probability(r: float, k: int) -> float:
    """Randomised-response keep probability written as r^-1 / (r^-1 + K - 1)."""
    if r == 0:
        return 1.0
    return (1.0 / r) / (1.0 / r + k - 1)


def rr_distribution(true_label: int, r: float, k: int) -> np.ndarray:
    keep = rr_keep_probability(r, k)
    probs = np.full(k, (1.0 - keep) / (k - 1))
    probs[true_label] = keep
    return probs


def entropy_reference(probs) -> float:
    return -sum(p * math.log(p) for p in probs if p > 0)


def numpy_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
