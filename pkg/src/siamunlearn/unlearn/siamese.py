"""The alternating concentrate/vaporize unlearning loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..augment import AugPipeline, augment_batch
from ..core.optim import SGD, SgdConfig
from ..datasets import DatasetSplit, LabeledDataset
from ..errors import ConfigError, DivergenceError
from ..models import Network
from .losses import siamese_objective
from .permutation import PermutationSampler, random_wrong_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnlearnConfig:
    lam: float = 1.0
    epochs: int = 10
    batch_forget: int = 32
    batch_retain: int = 32
    optimizer: SgdConfig = field(default_factory=lambda: SgdConfig(0.01, 0.9, 1e-4))
    method: str = "siamese"
    use_kvc: bool = True
    use_ce: bool = True
    use_alp: bool = True
    predictor_hidden: int = 64

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_forget < 2 or self.batch_retain < 2:
            raise ConfigError("batch sizes must be at least 2 (batch norm)")
        if not (self.use_kvc or self.use_ce):
            raise ConfigError("at least one of use_kvc / use_ce must be enabled")


class CyclicLoader:
    """Endless stream of fixed-size batches over a reshuffled index set.

    When a pass runs out mid-batch, the batch is completed from the next
    shuffled pass.
    """

    def __init__(self, indices: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.indices = np.asarray(indices)
        self.batch_size = min(batch_size, len(self.indices))
        self.rng = rng
        self._order = self.rng.permutation(self.indices)
        self._pos = 0

    def batches_per_pass(self) -> int:
        return math.ceil(len(self.indices) / self.batch_size)

    def next(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self._pos == len(self._order):
                self._order = self.rng.permutation(self.indices)
                self._pos = 0
            chunk = self._order[self._pos:self._pos + need]
            self._pos += len(chunk)
            need -= len(chunk)
            out.append(chunk)
        return np.concatenate(out)


def _views(aug: AugPipeline, ds: LabeledDataset, idx: np.ndarray, epoch: int):
    x = ds.images[idx]
    return augment_batch(aug, x, idx, 0, epoch), augment_batch(aug, x, idx, 1, epoch)


def siamese_unlearn(net: Network, ds: LabeledDataset, split: DatasetSplit, aug: AugPipeline,
                    cfg: UnlearnConfig, seed: int = 0,
                    on_epoch: Callable[[int, Network], None] | None = None) -> tuple[Network, list[dict]]:
    """Unlearn ``split.forget_indices`` using only the probe subset of retained data.

    Each iteration takes one probe batch and minimises the concentration
    loss plus ``lam`` times symmetric CE on the true labels, then one forget
    batch and minimises the vaporization loss plus ``lam`` times symmetric
    CE on labels drawn fresh from the adaptive permutation. Each half is its
    own backward pass and SGD step. An epoch runs as many iterations as the
    longer of the two loaders needs for one pass.

    The input network is not modified. Returns the unlearned copy (with a
    fresh predictor head attached) and one trace row per optimisation step.
    """
    if len(split.probe_indices) < 2:
        raise ConfigError(f"probe set needs at least 2 examples, has {len(split.probe_indices)}")
    if len(split.forget_indices) < 2:
        raise ConfigError(f"forget set needs at least 2 examples, has {len(split.forget_indices)}")
    out = net.copy()
    if cfg.epochs == 0:
        return out, []

    rng = np.random.default_rng([seed, 0x51A])
    out.attach_predictor(cfg.predictor_hidden, seed)
    out.train()
    aug = aug.with_seed(seed)
    opt = SGD(out, cfg.optimizer)
    retain = CyclicLoader(split.probe_indices, cfg.batch_retain, rng)
    forget = CyclicLoader(split.forget_indices, cfg.batch_forget, rng)
    sampler = PermutationSampler(split.ratios, ds.class_count, rng)
    iterations = max(retain.batches_per_pass(), forget.batches_per_pass())
    trace: list[dict] = []
    step = 0

    for epoch in range(cfg.epochs):
        for it in range(iterations):
            for phase in ("retain", "forget"):
                loader = retain if phase == "retain" else forget
                idx = loader.next()
                v1, v2 = _views(aug, ds, idx, epoch)
                labels = ds.labels[idx]
                if phase == "forget" and cfg.use_ce:
                    labels = sampler.sample(labels) if cfg.use_alp else \
                        random_wrong_labels(labels, ds.class_count, rng)
                terms = siamese_objective(out, v1, v2, labels, cfg.lam, vaporize=phase == "forget",
                                          use_kvc=cfg.use_kvc, use_ce=cfg.use_ce)
                value = terms.total.item()
                if not math.isfinite(value):
                    raise DivergenceError(f"siamese: non-finite {phase} loss at step {step}",
                                          step=step, tag=cfg.method)
                out.zero_grad()
                terms.total.backward()
                try:
                    opt.step()
                except DivergenceError as exc:
                    raise DivergenceError(f"siamese: {exc} at step {step}", step=step, tag=cfg.method) from exc
                trace.append({"epoch": epoch, "iteration": it, "step": step, "phase": phase,
                              "kvc": terms.kvc, "sce": terms.sce, "total": value})
                step += 1
        log.debug("siamese epoch %d last total %.4f", epoch, trace[-1]["total"])
        if on_epoch is not None:
            on_epoch(epoch, out)
    return out, trace
