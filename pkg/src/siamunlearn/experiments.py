"""In-memory experiment pipeline shared by the CLI and the scripts.

Nothing here touches the filesystem except :func:`load_datasets` when the
config names dataset files.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .datasets import DatasetSplit, LabeledDataset, build_split, generate_synthetic, load_dataset
from .errors import DataError
from .evaluation import MetricsReport, evaluate_network
from .models import Network
from .training import train_supervised
from .unlearn import (
    baseline_amnesiac,
    baseline_finetune,
    baseline_neggrad,
    baseline_randlab,
    baseline_retrain,
    siamese_unlearn,
)

# ablation rows in the order of the paper's table: (use_kvc, use_ce, use_alp)
ABLATION_GRID = ((False, True, False), (False, True, True), (True, False, False),
                 (True, True, False), (True, True, True))
ABLATION_COLUMNS = ("kvc", "ce", "alp", "seed", "acc_dr", "acc_df", "ta_dr", "ta_df", "mia")


def replicate(cfg: ExperimentConfig, seed: int, method: str | None = None) -> ExperimentConfig:
    """An independent replicate: run seed ``seed`` with synthetic data redrawn
    from ``train_seed + seed`` and ``test_seed + seed`` (layout unchanged)."""
    data = replace(cfg.data, train_seed=cfg.data.train_seed + seed, test_seed=cfg.data.test_seed + seed)
    return replace(cfg.with_overrides(seed=seed, method=method), data=data)


def load_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    d = cfg.data
    if bool(d.train_path) != bool(d.test_path):
        raise DataError("data.train_path and data.test_path must be given together")
    if d.train_path:
        train, test = load_dataset(d.train_path), load_dataset(d.test_path)
        if train.class_count != test.class_count or train.image_shape != test.image_shape:
            raise DataError(f"train set ({train.class_count} classes, {train.image_shape}) and test set "
                            f"({test.class_count} classes, {test.image_shape}) disagree")
        return train, test
    make = lambda seed, tag: generate_synthetic(d.kind, d.classes, d.per_class, d.image_size, seed,
                                                d.channels, d.noise, d.layout_seed, f"{d.kind}-{tag}")
    return make(d.train_seed, "train"), make(d.test_seed, "test")


def make_split(cfg: ExperimentConfig, train: LabeledDataset) -> DatasetSplit:
    scenario = cfg.scenario.scenario()
    probe = cfg.scenario.probe_size or None
    return build_split(train, scenario, probe, seed=cfg.run.seed)


def pretrain(cfg: ExperimentConfig, train: LabeledDataset, on_epoch=None) -> tuple[Network, list[dict]]:
    net = Network.create(cfg.model.arch_config(), train.image_shape, train.class_count, cfg.run.seed)
    history = train_supervised(net, train, np.arange(len(train)), cfg.pretrain.train_config(),
                               cfg.run.seed, cfg.augment.pipeline(), tag="pretrain", on_epoch=on_epoch)
    return net, history


def run_method(cfg: ExperimentConfig, net: Network, train: LabeledDataset,
               split: DatasetSplit) -> tuple[Network, list[dict], float]:
    """Apply ``cfg.unlearn.method`` to ``net``; returns (network, trace, seconds)."""
    method, seed, aug = cfg.unlearn.method, cfg.run.seed, cfg.augment.pipeline()
    start = time.perf_counter()
    if method == "siamese":
        out, trace = siamese_unlearn(net, train, split, aug, cfg.unlearn.unlearn_config(), seed)
    elif method == "retrain":
        out, trace = baseline_retrain(train, split, net.arch, cfg.pretrain.train_config(), seed, aug)
    else:
        fn = {"finetune": baseline_finetune, "neggrad": baseline_neggrad,
              "randlab": baseline_randlab, "amnesiac": baseline_amnesiac}[method]
        out, trace = fn(net, train, split, cfg.baseline.train_config(), seed, aug)
    return out, trace, time.perf_counter() - start


def evaluate(cfg: ExperimentConfig, net: Network, train: LabeledDataset, test: LabeledDataset,
             split: DatasetSplit, method: str, runtime: float = 0.0) -> MetricsReport:
    return evaluate_network(net, train, test, split, cfg.augment.pipeline(), method, cfg.scenario.kind,
                            cfg.run.seed, cfg.eval.settings(), runtime, cfg.config_hash())


@dataclass
class PipelineResult:
    original: Network
    unlearned: Network
    split: DatasetSplit
    reports: list[MetricsReport]
    trace: list[dict]


def run_pipeline(cfg: ExperimentConfig, original: Network | None = None) -> PipelineResult:
    """Pretrain (unless ``original`` is given), unlearn with the configured
    method and evaluate both models."""
    train, test = load_datasets(cfg)
    split = make_split(cfg, train)
    if original is None:
        original, _ = pretrain(cfg, train)
    unlearned, trace, runtime = run_method(cfg, original, train, split)
    reports = [evaluate(cfg, original, train, test, split, "original"),
               evaluate(cfg, unlearned, train, test, split, cfg.unlearn.method, runtime)]
    return PipelineResult(original, unlearned, split, reports, trace)


def ablation_grid(cfg: ExperimentConfig, seeds, originals: dict[int, Network] | None = None) -> list[dict]:
    """Run the Siamese method with each KVC/CE/ALP combination for each
    seed's :func:`replicate`.

    ``originals`` maps seed to an already pretrained network; missing seeds
    are pretrained here. Returns one row per (toggles, seed) with the
    :data:`ABLATION_COLUMNS` keys.
    """
    rows = []
    originals = dict(originals or {})
    for seed, (kvc, ce, alp) in itertools.product(seeds, ABLATION_GRID):
        run_cfg = replace(replicate(cfg, seed, "siamese"),
                          unlearn=replace(cfg.unlearn, method="siamese", use_kvc=kvc, use_ce=ce, use_alp=alp))
        train, test = load_datasets(run_cfg)
        if seed not in originals:
            originals[seed], _ = pretrain(run_cfg, train)
        split = make_split(run_cfg, train)
        net, _, runtime = run_method(run_cfg, originals[seed], train, split)
        rep = evaluate(run_cfg, net, train, test, split, "siamese", runtime)
        rows.append({"kvc": kvc, "ce": ce, "alp": alp, "seed": seed, "acc_dr": rep.acc_dr,
                     "acc_df": rep.acc_df, "ta_dr": rep.ta_dr, "ta_df": rep.ta_df, "mia": rep.mia})
    return rows


def ablation_csv(rows: list[dict], config_hash: str = "") -> str:
    mark = lambda v: "x" if v is True else ("" if v is False else (repr(v) if isinstance(v, float) else str(v)))
    lines = [f"# config_hash: {config_hash}"] if config_hash else []
    lines.append(",".join(ABLATION_COLUMNS))
    lines += [",".join(mark(row[c]) for c in ABLATION_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"
