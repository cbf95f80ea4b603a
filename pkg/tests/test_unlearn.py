import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rr_distribution, rr_keep_probability
from siamunlearn.augment import AugPipeline
from siamunlearn.core import nn
from siamunlearn.core.optim import SgdConfig
from siamunlearn.core.tensor import Tensor, mean, softmax_cross_entropy
from siamunlearn.datasets import build_split, full_class, generate_synthetic, sub_class
from siamunlearn.errors import ConfigError
from siamunlearn.models import ArchConfig, Network
from siamunlearn.training import TrainConfig
from siamunlearn.unlearn import (PermutationSampler, UnlearnConfig, baseline_finetune, baseline_neggrad,
                                 baseline_randlab, keep_probability, loss_kc, loss_kv, loss_sce,
                                 random_wrong_labels, siamese_objective, siamese_unlearn, transition_matrix)
from siamunlearn.unlearn.baselines import _wrong_labels
from siamunlearn.unlearn.siamese import CyclicLoader

TINY = ArchConfig("mlp", (12,))


def tiny_net(seed, k=3, shape=(1, 4, 4)):
    net = Network.create(TINY, shape, k, seed, dtype=np.float64)
    net.attach_predictor(8, seed)
    return net


def views(seed, m=6, shape=(1, 4, 4)):
    rng = np.random.default_rng([seed, 1])
    return rng.uniform(0, 1, (m, *shape)), rng.uniform(0, 1, (m, *shape))


def grads(net):
    return {n: p.grad.copy() if p.grad is not None else None for n, p in net.named_parameters()}


@pytest.fixture(scope="module")
def small():
    ds = generate_synthetic("rings", 3, 20, 12, seed=0)
    net = Network.create(ArchConfig("mlp", (16,)), ds.image_shape, 3, 0)
    return ds, net


# -------------------------------------------------------------- permutation

@pytest.mark.parametrize("k", [2, 3, 10])
@pytest.mark.parametrize("r", [0.0, 0.25, 0.9, 1.0])
def test_transition_matrix_matches_reference(r, k):
    mat = transition_matrix(np.full(k, r), k)
    assert np.allclose(mat.sum(axis=1), 1.0)
    assert np.allclose(mat[1 % k], rr_distribution(1 % k, r, k))
    assert keep_probability(r, k) == pytest.approx(rr_keep_probability(r, k))


def test_sampler_extremes():
    ident = PermutationSampler(np.zeros(4), 4, rng=0)
    labels = np.arange(4).repeat(50)
    assert np.array_equal(ident.sample(labels), labels)
    uniform = PermutationSampler(np.ones(4), 4, rng=0)
    assert uniform.keep == pytest.approx(0.25)


def test_sampler_errors():
    with pytest.raises(ConfigError):
        PermutationSampler(np.zeros(3), 4)
    with pytest.raises(ConfigError):
        PermutationSampler(np.full(3, 1.5), 3)
    with pytest.raises(IndexError):
        PermutationSampler(np.zeros(3), 3).sample(np.array([3]))


@given(st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
def test_random_wrong_labels_never_true(k, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, 200)
    out = random_wrong_labels(labels, k, rng)
    assert np.all(out != labels) and out.min() >= 0 and out.max() < k


# ------------------------------------------------------------------- losses

@pytest.mark.parametrize("seed", range(5))
def test_kc_is_bitwise_negation_of_kv(seed):
    net = tiny_net(seed)
    v1, v2 = views(seed)
    kv, kc = loss_kv(net, v1, v2).item(), loss_kc(net, v1, v2).item()
    assert kc == -kv


@pytest.mark.parametrize("seed", range(5))
def test_losses_invariant_under_view_swap(seed):
    net = tiny_net(seed)
    v1, v2 = views(seed)
    labels = np.arange(6) % 3
    assert loss_kv(net, v1, v2).item() == loss_kv(net, v2, v1).item()
    assert loss_kc(net, v1, v2).item() == loss_kc(net, v2, v1).item()
    assert loss_sce(net, v1, v2, labels).item() == loss_sce(net, v2, v1, labels).item()


def test_identical_views_give_bounded_alignment():
    net = tiny_net(0)
    v1, _ = views(0)
    assert -1.0 <= loss_kc(net, v1, v1).item() <= 1.0


def test_identity_predictor_extremes():
    net = tiny_net(0)
    net.predictor = nn.Identity()
    v1, _ = views(0)
    assert np.isclose(loss_kv(net, v1, v1).item(), 1.0)
    assert np.isclose(loss_kc(net, v1, v1).item(), -1.0)


def test_orthogonal_predictor_gives_zero_loss():
    net = tiny_net(0, k=2)
    rot = nn.Linear(2, 2, np.random.default_rng(0), np.float64)
    rot.weight.data = np.array([[0.0, -1.0], [1.0, 0.0]])
    rot.bias.data = np.zeros(2)
    net.predictor = rot
    v1, _ = views(0)
    assert abs(loss_kv(net, v1, v1).item()) < 1e-12


def test_sce_of_uniform_logits_is_log_k():
    net = tiny_net(0, k=10)
    last = net.backbone.parameters()[-2:]
    for p in last:
        p.data = np.zeros_like(p.data)
    v1, v2 = views(0)
    assert np.isclose(loss_sce(net, v1, v2, np.arange(6)).item(), np.log(10))


def test_half_ratio_keep_probability():
    row = transition_matrix(np.full(10, 0.5), 10)[4]
    assert np.isclose(keep_probability(0.5, 10), 2 / 11)
    assert np.isclose(row[4], 2 / 11) and np.allclose(np.delete(row, 4), 1 / 11)


@pytest.mark.parametrize("vaporize", [True, False])
def test_lambda_zero_removes_sce_gradient(vaporize):
    net = tiny_net(3)
    v1, v2 = views(3)
    labels = np.array([0, 1, 2, 0, 1, 2])
    siamese_objective(net, v1, v2, labels, 0.0, vaporize).total.backward()
    with_zero = grads(net)
    net.zero_grad()
    siamese_objective(net, v1, v2, labels, 5.0, vaporize, use_ce=False).total.backward()
    without = grads(net)
    for name in with_zero:
        assert np.array_equal(with_zero[name], without[name]), name


def test_objective_reports_terms():
    net = tiny_net(1)
    v1, v2 = views(1)
    labels = np.zeros(6, dtype=int)
    terms = siamese_objective(net, v1, v2, labels, 2.0, vaporize=True)
    assert terms.total.item() == pytest.approx(terms.kvc + 2.0 * terms.sce)
    assert terms.kvc == pytest.approx(loss_kv(net, v1, v2).item())


# ------------------------------------------------------------------ siamese

def test_cyclic_loader_covers_each_pass():
    loader = CyclicLoader(np.arange(10), 4, np.random.default_rng(0))
    seen = np.concatenate([loader.next() for _ in range(5)])
    assert len(seen) == 20
    assert np.array_equal(np.sort(seen[:8]), np.sort(np.unique(seen[:8])))
    assert set(seen[:10].tolist()) | set(seen[10:].tolist()) == set(range(10))


def test_siamese_unlearn_contract(small):
    ds, net = small
    split = build_split(ds, full_class(1), probe_size=12, seed=0)
    before = net.state_dict()
    cfg = UnlearnConfig(epochs=2, batch_forget=8, batch_retain=8)
    aug = AugPipeline("simple")
    out, trace = siamese_unlearn(net, ds, split, aug, cfg, seed=4)
    for k, v in net.state_dict().items():
        assert np.array_equal(v, before[k])
    assert out.predictor is not None
    assert [t["phase"] for t in trace[:4]] == ["retain", "forget", "retain", "forget"]
    assert len(trace) == 2 * 2 * 3  # epochs x phases x max(ceil(12/8), ceil(20/8))
    again, trace2 = siamese_unlearn(net, ds, split, aug, cfg, seed=4)
    assert trace == trace2
    for k, v in out.state_dict().items():
        assert np.array_equal(v, again.state_dict()[k])


def test_siamese_zero_epochs_is_identity(small):
    ds, net = small
    split = build_split(ds, full_class(0), probe_size=6)
    out, trace = siamese_unlearn(net, ds, split, AugPipeline(), UnlearnConfig(epochs=0))
    assert trace == [] and out is not net
    for k, v in net.state_dict().items():
        assert np.array_equal(v, out.state_dict()[k])


def test_unlearn_config_validation():
    with pytest.raises(ConfigError):
        UnlearnConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        UnlearnConfig(use_kvc=False, use_ce=False)
    with pytest.raises(ConfigError):
        UnlearnConfig(batch_forget=1)


# ---------------------------------------------------------------- baselines

def forget_ce(net, ds, idx):
    net.eval()
    return mean(softmax_cross_entropy(net(Tensor(ds.images[idx])), ds.labels[idx])).item()


def test_neggrad_single_step_increases_forget_ce(small):
    ds, net = small
    split = build_split(ds, sub_class(2, 0.5), probe_size=6)
    cfg = TrainConfig(epochs=1, batch_size=len(split.forget_indices),
                      optimizer=SgdConfig(0.01, 0.0, 0.0), warmup_epochs=0, milestones=())
    out, hist = baseline_neggrad(net, ds, split, cfg, seed=0)
    assert len(hist) == 1
    assert forget_ce(out, ds, split.forget_indices) > forget_ce(net.copy(), ds, split.forget_indices)


def test_randlab_labels_are_always_wrong_and_stable_within_epoch():
    fn = _wrong_labels(5)
    rng = np.random.default_rng(0)
    idx, labels = np.arange(100), np.arange(100) % 5
    first = fn(0, idx, labels, rng)
    assert np.all(first != labels)
    assert np.array_equal(first, fn(0, idx, labels, rng))
    assert not np.array_equal(first, fn(1, idx, labels, rng))


def test_baselines_leave_input_untouched(small):
    ds, net = small
    split = build_split(ds, full_class(0), probe_size=6)
    cfg = TrainConfig(epochs=1, batch_size=8, optimizer=SgdConfig(0.01, 0.9, 0.0), warmup_epochs=0,
                      milestones=())
    before = net.state_dict()
    for fn in (baseline_finetune, baseline_randlab):
        out, _ = fn(net, ds, split, cfg, seed=0)
        assert out is not net
    for k, v in net.state_dict().items():
        assert np.array_equal(v, before[k])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_sampler_is_reproducible(seed):
    ratios = np.array([0.0, 0.9, 0.3])
    labels = np.arange(3).repeat(20)
    a = PermutationSampler(ratios, 3, seed).sample(labels)
    b = PermutationSampler(ratios, 3, seed).sample(labels)
    assert np.array_equal(a, b)
    assert np.array_equal(a[:20], labels[:20])
