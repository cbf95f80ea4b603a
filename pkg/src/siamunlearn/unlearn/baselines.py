"""Non-teacher unlearning baselines.

All of them are plain cross-entropy training runs that differ only in
which examples they see, which labels they use and the update sign.
Each returns the resulting network and the per-epoch training log.
"""

from __future__ import annotations

import numpy as np

from ..augment import AugPipeline
from ..datasets import DatasetSplit, LabeledDataset
from ..models import ArchConfig, Network
from ..training import TrainConfig, train_supervised
from .permutation import random_wrong_labels


def baseline_retrain(ds: LabeledDataset, split: DatasetSplit, arch: ArchConfig, train_cfg: TrainConfig,
                     seed: int = 0, aug: AugPipeline | None = None) -> tuple[Network, list[dict]]:
    """Fresh initialisation trained on the retained data only."""
    net = Network.create(arch, ds.image_shape, ds.class_count, seed)
    history = train_supervised(net, ds, split.retain_indices, train_cfg, seed, aug, tag="retrain")
    return net, history


def baseline_finetune(net: Network, ds: LabeledDataset, split: DatasetSplit, cfg: TrainConfig,
                      seed: int = 0, aug: AugPipeline | None = None) -> tuple[Network, list[dict]]:
    out = net.copy()
    history = train_supervised(out, ds, split.retain_indices, cfg, seed, aug, tag="finetune")
    return out, history


def baseline_neggrad(net: Network, ds: LabeledDataset, split: DatasetSplit, cfg: TrainConfig,
                     seed: int = 0, aug: AugPipeline | None = None) -> tuple[Network, list[dict]]:
    """Gradient ascent on the forget-set cross-entropy."""
    out = net.copy()
    history = train_supervised(out, ds, split.forget_indices, cfg, seed, aug, ascent=True, tag="neggrad")
    return out, history


def _wrong_labels(class_count: int):
    # (epoch, idx) -> label, drawn once per example per epoch
    cache: dict[tuple[int, int], int] = {}

    def label_fn(epoch, idx, labels, rng):
        out = np.empty_like(labels)
        for j, (i, y) in enumerate(zip(idx, labels)):
            key = (epoch, int(i))
            if key not in cache:
                cache[key] = int(random_wrong_labels(np.array([y]), class_count, rng)[0])
            out[j] = cache[key]
        return out

    return label_fn


def baseline_randlab(net: Network, ds: LabeledDataset, split: DatasetSplit, cfg: TrainConfig,
                     seed: int = 0, aug: AugPipeline | None = None) -> tuple[Network, list[dict]]:
    """Descent on the forget set with a wrong label per example, redrawn each epoch."""
    out = net.copy()
    history = train_supervised(out, ds, split.forget_indices, cfg, seed, aug,
                     label_fn=_wrong_labels(ds.class_count), tag="randlab")
    return out, history


def baseline_amnesiac(net: Network, ds: LabeledDataset, split: DatasetSplit, cfg: TrainConfig,
                      seed: int = 0, aug: AugPipeline | None = None) -> tuple[Network, list[dict]]:
    """Joint descent on retained data and randomly relabelled forget data."""
    out = net.copy()
    forget = set(split.forget_indices.tolist())
    wrong = _wrong_labels(ds.class_count)

    def label_fn(epoch, idx, labels, rng):
        relabel = wrong(epoch, idx, labels, rng)
        mask = np.fromiter((int(i) in forget for i in idx), dtype=bool, count=len(idx))
        return np.where(mask, relabel, labels)

    everything = np.union1d(split.retain_indices, split.forget_indices)
    history = train_supervised(out, ds, everything, cfg, seed, aug, label_fn=label_fn, tag="amnesiac")
    return out, history
