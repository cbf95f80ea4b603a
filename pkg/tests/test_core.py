import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from siamunlearn.core import nn
from siamunlearn.core.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from siamunlearn.core.optim import SGD, SgdConfig, scaled_milestones, scheduled_lr, sgd_step
from siamunlearn.core.tensor import Tensor
from siamunlearn.errors import ConfigError, DimensionError, DivergenceError, FormatError

finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)
names = st.text(st.characters(codec="utf-8", exclude_categories=("Cs",)), min_size=1, max_size=20)


# ---------------------------------------------------------------------- SGD

def test_sgd_step_matches_hand_computation():
    cfg = SgdConfig(0.1, 0.9, 0.01)
    p, g, v = np.array([1.0, -2.0]), np.array([0.5, 0.5]), np.array([0.2, 0.0])
    new_p, new_v = sgd_step({"w": p}, {"w": g}, {"w": v}, cfg)
    expect_v = 0.9 * v + g + 0.01 * p
    assert np.allclose(new_v["w"], expect_v)
    assert np.allclose(new_p["w"], p - 0.1 * expect_v)
    assert np.array_equal(p, [1.0, -2.0])  # inputs untouched


def test_sgd_momentum_accumulates_constant_gradient():
    cfg = SgdConfig(0.1, 0.9, 0.0)
    g = {"w": np.array([1.0, -2.0])}
    p1, v1 = sgd_step({"w": np.zeros(2)}, g, {}, cfg)
    p2, _ = sgd_step(p1, g, v1, cfg)
    assert np.allclose(p1["w"], -0.1 * g["w"])
    assert np.allclose(p2["w"] - p1["w"], -0.1 * 1.9 * g["w"])


def test_sgd_zero_gradient_without_momentum_only_decays():
    cfg = SgdConfig(0.5, 0.0, 0.0)
    new_p, _ = sgd_step({"w": np.ones(3)}, {"w": np.zeros(3)}, {}, cfg)
    assert np.array_equal(new_p["w"], np.ones(3))


def test_sgd_errors():
    cfg = SgdConfig()
    with pytest.raises(DivergenceError, match="w"):
        sgd_step({"w": np.ones(2)}, {"w": np.array([np.nan, 0.0])}, {}, cfg)
    with pytest.raises(DimensionError):
        sgd_step({"w": np.ones(2)}, {"w": np.ones(3)}, {}, cfg)
    for bad in (dict(learning_rate=0.0), dict(momentum=1.0), dict(weight_decay=-1.0)):
        with pytest.raises(ConfigError):
            SgdConfig(**bad)


def test_sgd_ascent_flips_direction():
    layer = nn.Linear(2, 1, np.random.default_rng(0), np.float64)
    before = layer.weight.data.copy()
    layer.weight.grad = np.ones_like(before)
    layer.bias.grad = np.zeros(1)
    SGD(layer, SgdConfig(0.1, 0.0, 0.0), sign=-1.0).step()
    assert np.allclose(layer.weight.data, before + 0.1)


def test_schedule_milestones_and_warmup():
    assert scaled_milestones(200) == [60, 120, 160]
    assert scaled_milestones(30) == [9, 18, 24]
    assert scaled_milestones(0) == []
    lrs = [scheduled_lr(1.0, 0, s, 4, 1, [2]) for s in range(4)]
    assert lrs == [0.25, 0.5, 0.75, 1.0]
    assert scheduled_lr(1.0, 1, 0, 4, 1, [2]) == 1.0
    assert scheduled_lr(1.0, 2, 0, 4, 1, [2]) == pytest.approx(0.1)


# ------------------------------------------------------------------ modules

def test_state_dict_roundtrip_and_shape_diff():
    rng = np.random.default_rng(0)
    a = nn.Sequential(nn.Linear(4, 3, rng), nn.BatchNorm(3), nn.ReLU(), nn.Linear(3, 2, rng))
    b = nn.Sequential(nn.Linear(4, 3, rng), nn.BatchNorm(3), nn.ReLU(), nn.Linear(3, 2, rng))
    b.load_state_dict(a.state_dict())
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    c = nn.Sequential(nn.Linear(4, 5, rng), nn.BatchNorm(5), nn.ReLU(), nn.Linear(5, 2, rng))
    with pytest.raises(DimensionError, match=r"0\.weight: expected \(5, 4\), checkpoint has \(3, 4\)"):
        c.load_state_dict(a.state_dict())


def test_train_eval_mode_switches_batch_norm():
    bn = nn.BatchNorm(2, dtype=np.float64)
    x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
    bn.train()
    assert np.allclose(bn(x).data.mean(axis=0), 0.0)
    bn.eval()
    before = bn._buffers["running_mean"].copy()
    bn(x)
    assert np.array_equal(before, bn._buffers["running_mean"])


# --------------------------------------------------------------- checkpoints

@settings(max_examples=50)
@given(st.dictionaries(names, arrays(np.float32, st.tuples(st.integers(0, 3), st.integers(1, 4)),
                                     elements=finite32), max_size=4))
def test_checkpoint_roundtrip_bitwise(state):
    back = decode_checkpoint(encode_checkpoint(state))
    assert list(back) == list(state)
    for k in state:
        assert back[k].tobytes() == state[k].tobytes() and back[k].shape == state[k].shape


def test_checkpoint_file_roundtrip(tmp_path):
    state = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "scalar": np.float32(2.5)}
    save_checkpoint(state, tmp_path / "m.vapw")
    back = load_checkpoint(tmp_path / "m.vapw")
    assert np.array_equal(back["a.weight"], state["a.weight"]) and back["scalar"].shape == ()
    assert (tmp_path / "m.vapw").read_bytes() == encode_checkpoint(state)


def test_checkpoint_corruption_reports_offsets():
    blob = encode_checkpoint({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="byte offset"):
        decode_checkpoint(blob[:-3])
    with pytest.raises(FormatError):
        decode_checkpoint(blob + b"\0")
    with pytest.raises(FormatError, match="version"):
        decode_checkpoint(blob[:4] + b"\x09\x00" + blob[6:])
