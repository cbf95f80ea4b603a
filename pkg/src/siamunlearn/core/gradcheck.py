"""Central finite-difference gradient checks in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def _scalarise(out: Tensor, cotangent: np.ndarray) -> float:
    return float(np.sum(out.data * cotangent))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``max |a - n|`` over ``max(|a|, |n|)``, both as infinity norms.

    Normalising by the tensor's largest entry keeps tiny entries (where
    rounding dominates) from inflating the error.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6,
                    seed: int = 0, wrt: Sequence[int] | None = None) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor of any shape; it is contracted with a
    fixed random cotangent so every output entry contributes. ``wrt``
    selects which inputs to differentiate (default: all).
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    # own stream, so the cotangent is never a copy of same-seeded inputs
    cotangent = np.random.default_rng([seed, 0xC07]).standard_normal(out.shape)
    out.backward(cotangent)

    worst = 0.0
    for i in wrt:
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = _scalarise(fn(*[Tensor(a.copy()) for a in arrays]), cotangent)
            flat[j] = orig - eps
            down = _scalarise(fn(*[Tensor(a.copy()) for a in arrays]), cotangent)
            flat[j] = orig
            numeric.reshape(-1)[j] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
