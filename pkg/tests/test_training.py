import numpy as np
import pytest

from siamunlearn.augment import AugPipeline
from siamunlearn.datasets import build_split, full_class, generate_synthetic
from siamunlearn.errors import ConfigError
from siamunlearn.evaluation import accuracy
from siamunlearn.models import ArchConfig, Network
from siamunlearn.training import TrainConfig, epoch_batches, train_supervised
from siamunlearn.unlearn import baseline_retrain


@pytest.fixture(scope="module")
def blobs():
    return generate_synthetic("blobs", 3, 200, 16, seed=7)


def test_mlp_reaches_95_percent_in_30_epochs(blobs):
    net = Network.create(ArchConfig("mlp", (32,)), blobs.image_shape, 3, seed=0)
    history = train_supervised(net, blobs, np.arange(len(blobs)), TrainConfig(epochs=30), seed=0,
                               aug=AugPipeline("simple"))
    assert len(history) == 30
    assert accuracy(net, blobs, np.arange(len(blobs))) >= 95.0


def test_two_layer_net_reaches_95_percent_within_50_epochs(blobs):
    net = Network.create(ArchConfig("mlp", (16,)), blobs.image_shape, 3, seed=1)
    reached = []
    train_supervised(net, blobs, np.arange(len(blobs)), TrainConfig(epochs=50, augment=False), seed=1,
                     on_epoch=lambda e, row: reached.append(row["train_acc"] >= 95.0))
    assert any(reached)


def test_retrain_is_seed_deterministic(blobs):
    split = build_split(blobs, full_class(1), 30, seed=0)
    cfg = TrainConfig(epochs=2)
    a, _ = baseline_retrain(blobs, split, ArchConfig("mlp", (8,)), cfg, seed=3)
    b, _ = baseline_retrain(blobs, split, ArchConfig("mlp", (8,)), cfg, seed=3)
    for (_, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(x.data, y.data)


def test_epoch_batches_partition_and_minimum_size():
    rng = np.random.default_rng(0)
    batches = epoch_batches(103, 10, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(103))
    assert min(len(b) for b in batches) >= 10
    with pytest.raises(ConfigError):
        epoch_batches(1, 10, rng)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
