"""SGD with heavy-ball momentum and coupled weight decay, plus LR schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, DivergenceError
from .nn import Module


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             velocity: Mapping[str, np.ndarray], cfg: SgdConfig,
             learning_rate: float | None = None) -> tuple[dict, dict]:
    """One update: ``v = momentum*v + grad + wd*param``; ``param -= lr*v``.

    Returns new ``(params, velocity)`` dicts; inputs are not modified. A
    missing velocity entry starts at zero. ``learning_rate`` overrides the
    config value (used by schedules).
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    new_params, new_vel = {}, {}
    for name, p in params.items():
        g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        if g.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"shape disagreement for {name}: param {p.shape}, "
                                 f"grad {g.shape}, velocity {v.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}", tag=name)
        v = cfg.momentum * v + g + cfg.weight_decay * p
        new_vel[name] = v.astype(p.dtype, copy=False)
        new_params[name] = (p - lr * v).astype(p.dtype, copy=False)
    return new_params, new_vel


class SGD:
    """Stateful wrapper applying :func:`sgd_step` to a module's parameters."""

    def __init__(self, module: Module, cfg: SgdConfig, sign: float = 1.0):
        self.module = module
        self.cfg = cfg
        self.velocity: dict[str, np.ndarray] = {}
        self.sign = sign
        self.lr = cfg.learning_rate

    def step(self) -> None:
        named = dict(self.module.named_parameters())
        params = {n: t.data for n, t in named.items()}
        grads = {}
        for n, t in named.items():
            g = np.zeros_like(t.data) if t.grad is None else t.grad
            grads[n] = g if self.sign == 1.0 else self.sign * g
        new_params, self.velocity = sgd_step(params, grads, self.velocity, self.cfg, self.lr)
        for n, t in named.items():
            t.data = new_params[n]

    def zero_grad(self) -> None:
        self.module.zero_grad()


def scaled_milestones(epochs: int, fractions: Sequence[float] = (0.3, 0.6, 0.8)) -> list[int]:
    """Scale the 60/120/160-of-200 step schedule to ``epochs``."""
    return sorted({max(1, round(f * epochs)) for f in fractions if round(f * epochs) < epochs})


def scheduled_lr(base_lr: float, epoch: int, step_in_epoch: int, steps_per_epoch: int,
                 warmup_epochs: int, milestones: Sequence[int], gamma: float = 0.1) -> float:
    """Linear warm-up over ``warmup_epochs`` then step decay at each milestone."""
    if epoch < warmup_epochs:
        progress = (epoch * steps_per_epoch + step_in_epoch + 1) / (warmup_epochs * steps_per_epoch)
        return base_lr * progress
    return base_lr * gamma ** sum(epoch >= m for m in milestones)
