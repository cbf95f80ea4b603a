"""Supervised mini-batch training shared by pretraining and the baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugPipeline, augment_batch
from .core.optim import SGD, SgdConfig, scaled_milestones, scheduled_lr
from .core.tensor import Tensor, mean, softmax_cross_entropy
from .datasets import LabeledDataset
from .errors import ConfigError, DivergenceError
from .models import Network

log = logging.getLogger(__name__)

# (epoch, batch indices, true labels, rng) -> labels to train on
LabelFn = Callable[[int, np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    optimizer: SgdConfig = field(default_factory=lambda: SgdConfig(0.05, 0.9, 1e-4))
    warmup_epochs: int = 1
    # None: scale the 60/120/160-of-200 milestones to ``epochs``
    milestones: tuple[int, ...] | None = None
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2 (batch norm), got {self.batch_size}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be non-negative, got {self.warmup_epochs}")

    def resolved_milestones(self) -> list[int]:
        if self.milestones is not None:
            return list(self.milestones)
        return scaled_milestones(self.epochs)


# the schedule used for the original models in the paper's experiments
PAPER_PRETRAIN = TrainConfig(epochs=200, batch_size=128, optimizer=SgdConfig(0.001, 0.0, 1e-4),
                             warmup_epochs=2, milestones=(60, 120, 160))


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``range(n)`` into ``n // batch_size`` batches of roughly equal size.

    Leftovers are spread over the batches rather than forming a short last
    batch, so every batch has at least ``batch_size`` entries (batch norm
    needs two).
    """
    if n < 2:
        raise ConfigError(f"need at least 2 training examples, got {n}")
    perm = rng.permutation(n)
    return np.array_split(perm, max(1, n // batch_size))


def train_supervised(net: Network, ds: LabeledDataset, indices: np.ndarray, cfg: TrainConfig,
                     seed: int, aug: AugPipeline | None = None, label_fn: LabelFn | None = None,
                     ascent: bool = False, tag: str = "train",
                     on_epoch: Callable[[int, dict], None] | None = None) -> list[dict]:
    """Cross-entropy SGD on ``ds[indices]``; returns one log row per epoch.

    ``ascent`` flips the update direction (gradient ascent on the loss).
    ``label_fn`` substitutes training labels per batch.
    """
    indices = np.asarray(indices)
    rng = np.random.default_rng([seed, 0x7A])
    opt = SGD(net.backbone, cfg.optimizer, sign=-1.0 if ascent else 1.0)
    milestones = cfg.resolved_milestones()
    aug = aug.with_seed(seed) if aug is not None else None
    history = []
    net.train()
    step = 0
    for epoch in range(cfg.epochs):
        batches = epoch_batches(len(indices), cfg.batch_size, rng)
        total, correct, seen = 0.0, 0, 0
        for b, pos in enumerate(batches):
            idx = indices[pos]
            x = ds.images[idx]
            if aug is not None and cfg.augment:
                x = augment_batch(aug, x, idx, 0, epoch)
            y = ds.labels[idx] if label_fn is None else label_fn(epoch, idx, ds.labels[idx], rng)
            opt.lr = scheduled_lr(cfg.optimizer.learning_rate, epoch, b, len(batches),
                                  cfg.warmup_epochs, milestones)
            logits = net(Tensor(x))
            loss = mean(softmax_cross_entropy(logits, y))
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"{tag}: non-finite loss at step {step}", step=step, tag=tag)
            net.zero_grad()
            loss.backward()
            try:
                opt.step()
            except DivergenceError as exc:
                raise DivergenceError(f"{tag}: {exc} at step {step}", step=step, tag=tag) from exc
            total += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == ds.labels[idx]).sum())
            seen += len(idx)
            step += 1
        row = {"epoch": epoch, "lr": opt.lr, "loss": total / seen, "train_acc": 100.0 * correct / seen}
        history.append(row)
        log.debug("%s epoch %d loss %.4f acc %.2f", tag, epoch, row["loss"], row["train_acc"])
        if on_epoch is not None:
            on_epoch(epoch, row)
    return history
