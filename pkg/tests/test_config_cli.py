import csv
import json
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamunlearn import cli
from siamunlearn.config import (METHODS, DataSection, ExperimentConfig, PretrainSection, ScenarioSection,
                                UnlearnSection, load_config, paper_preset, save_config)
from siamunlearn.errors import ConfigError
from siamunlearn.models import Network

TINY_INI = """
[data]
classes = 3
per_class = 20
image_size = 12
kind = rings
[model]
arch = mlp
widths = 8
[pretrain]
epochs = 2
batch_size = 16
[unlearn]
epochs = 1
batch_forget = 8
batch_retain = 8
[baseline]
epochs = 1
batch_size = 8
[eval]
kl_views = 3
kl_examples = 2
export_samples = 2
export_views = 2
[scenario]
classes = 2
probe_size = 6
"""


def test_text_roundtrip_preserves_everything(tmp_path):
    for cfg in (ExperimentConfig(), paper_preset(),
                ExperimentConfig(pretrain=PretrainSection(milestones=()),
                                 scenario=ScenarioSection(kind="sub_class", classes=(0,), fraction=0.5))):
        save_config(cfg, tmp_path / "c.ini")
        assert load_config(tmp_path / "c.ini") == cfg


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0, 100), epochs=st.integers(0, 500), kvc=st.booleans(),
       widths=st.lists(st.integers(1, 64), min_size=1, max_size=3))
def test_roundtrip_hypothesis(lam, epochs, kvc, widths):
    cfg = ExperimentConfig(unlearn=UnlearnSection(lam=lam, epochs=epochs, use_kvc=kvc, use_ce=True))
    cfg = replace(cfg, model=replace(cfg.model, widths=tuple(widths)))
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


def test_hash_ignores_run_selection_but_not_hyperparameters():
    cfg = ExperimentConfig()
    h = cfg.config_hash()
    assert len(h) == 16
    assert cfg.with_overrides(seed=7, method="neggrad", out_dir="elsewhere").config_hash() == h
    assert replace(cfg, unlearn=replace(cfg.unlearn, lam=2.0)).config_hash() != h
    assert replace(cfg, data=DataSection(per_class=50)).config_hash() != h


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown method 'forget'; valid methods: " + ", ".join(METHODS)):
        ExperimentConfig().with_overrides(method="forget")
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_text("[unlearn]\nlamda = 2\n")
    with pytest.raises(ConfigError, match="unknown section"):
        ExperimentConfig.from_text("[training]\nepochs = 2\n")
    with pytest.raises(ConfigError, match="unlearn.lam"):
        ExperimentConfig.from_text("[unlearn]\nlam = lots\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("[unlearn]\nuse_kvc = false\nuse_ce = false\n")
    assert ExperimentConfig.from_text("[unlearn]\nlam = 3  # inline comment\n").unlearn.lam == 3.0


# ----------------------------------------------------------------------- CLI

@pytest.fixture()
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI + f"[run]\nout_dir = {tmp_path / 'run'}\n")
    return path, tmp_path / "run"


def rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_cli_pipeline_end_to_end(tiny, capsys):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    assert (out / "pretrain/seed0/model.vapw").exists()
    for method in ("siamese", "finetune"):
        assert cli.main(["unlearn", "--config", str(ini), "--method", method]) == 0
    meta = json.loads((out / "unlearn/siamese/seed0/model.json").read_text())
    assert meta["method"] == "siamese" and len(meta["trace"]) == 1
    assert cli.main(["evaluate", "--config", str(ini)]) == 0
    reports = rows(out / "reports.csv")
    assert [r["method"] for r in reports] == ["original", "siamese", "finetune"]
    assert "acc_df" in capsys.readouterr().out
    assert cli.main(["export-plots", "--config", str(ini)]) == 0
    plot_dir = out / "plots/finetune-seed0"
    proj = rows(plot_dir / "projection.csv")
    assert len(proj) == 4 * 2 and set(proj[0]) == {"example_id", "label", "is_forget", "x", "y"}
    hist = rows(plot_dir / "entropy_hist.csv")
    assert {r["set"] for r in hist} == {"forget", "retain", "test"}
    first_line = (plot_dir / "logits.csv").read_text().splitlines()[0]
    assert first_line == f"# config_hash: {load_config(ini).config_hash()}"


def test_cli_gen_data_then_load(tmp_path):
    target = tmp_path / "d" / "train.suds"
    assert cli.main(["gen-data", "--kind", "rings", "--classes", "3", "--per-class", "20", "--size", "12",
                     "--out", str(target)]) == 0
    from siamunlearn.datasets import generate_synthetic, load_dataset
    assert load_dataset(target) == generate_synthetic("rings", 3, 20, 12, seed=0)


def test_cli_exit_codes(tiny, tmp_path):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini), "--method", "bogus"]) == 2
    assert cli.main(["pretrain", "--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["unlearn", "--config", str(ini), "--checkpoint", str(tmp_path / "none.vapw")]) == 3
    bad_data = tmp_path / "bad.ini"
    bad_data.write_text(ini.read_text().replace("[data]", f"[data]\ntrain_path = {tmp_path / 'no.suds'}"))
    assert cli.main(["pretrain", "--config", str(bad_data)]) == 3


def test_cli_refuses_foreign_config_and_locked_dir(tiny, tmp_path):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    other = tmp_path / "other.ini"
    other.write_text(ini.read_text().replace("epochs = 2", "epochs = 3"))
    assert cli.main(["pretrain", "--config", str(other)]) == 2
    (out / ".lock").write_text(str(os.getpid()))
    assert cli.main(["evaluate", "--config", str(ini)]) == 2
    (out / ".lock").write_text("999999999")  # stale owner is taken over
    assert cli.main(["evaluate", "--config", str(ini)]) == 0
    assert not (out / ".lock").exists()


def test_cli_architecture_mismatch_is_a_config_error(tiny, tmp_path):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    wide = tmp_path / "wide.ini"
    wide.write_text(ini.read_text().replace("widths = 8", "widths = 9").replace(str(out), str(tmp_path / "w")))
    code = cli.main(["unlearn", "--config", str(wide), "--checkpoint", str(out / "pretrain/seed0/model.vapw")])
    assert code == 2


def test_checkpoint_carries_config_hash(tiny):
    ini, out = tiny
    cli.main(["pretrain", "--config", str(ini)])
    from siamunlearn.core.checkpoint import load_checkpoint
    stamp = load_checkpoint(out / "pretrain/seed0/model.vapw")[cli.HASH_KEY]
    assert bytes(stamp.astype(np.uint8)).decode() == load_config(ini).config_hash()


def test_cli_zero_epoch_pretrain_writes_initialisation(tiny, tmp_path):
    ini, out = tiny
    zero = tmp_path / "zero.ini"
    zero.write_text(ini.read_text().replace("epochs = 2", "epochs = 0"))
    assert cli.main(["pretrain", "--config", str(zero)]) == 0
    assert rows(out / "pretrain/seed0/log.csv") == []
    from siamunlearn import experiments as ex
    from siamunlearn.core.checkpoint import load_checkpoint
    cfg = load_config(zero)
    train, _ = ex.load_datasets(cfg)
    fresh = Network.create(cfg.model.arch_config(), train.image_shape, train.class_count, 0)
    saved = load_checkpoint(out / "pretrain/seed0/model.vapw")
    for name, p in fresh.named_parameters():
        assert np.array_equal(saved[name], p.data)


def test_cli_pretrain_is_bitwise_deterministic(tiny, tmp_path):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    first = (out / "pretrain/seed0/model.vapw").read_bytes()
    assert cli.main(["pretrain", "--config", str(ini), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again/pretrain/seed0/model.vapw").read_bytes() == first


def test_cli_retrain_ignores_checkpoint_weights(tiny, tmp_path):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    assert cli.main(["unlearn", "--config", str(ini), "--method", "retrain"]) == 0
    first = (out / "unlearn/retrain/seed0/model.vapw").read_bytes()
    other = tmp_path / "other.ini"
    other.write_text(ini.read_text().replace(str(out), str(tmp_path / "o")).replace("epochs = 2", "epochs = 2\nlearning_rate = 0.5", 1))
    assert cli.main(["pretrain", "--config", str(other)]) == 0
    code = cli.main(["unlearn", "--config", str(ini), "--method", "retrain", "--out", str(tmp_path / "r"),
                     "--checkpoint", str(tmp_path / "o/pretrain/seed0/model.vapw")])
    assert code == 0
    assert (tmp_path / "r/unlearn/retrain/seed0/model.vapw").read_bytes() == first


def test_cli_evaluate_twice_appends_identical_rows(tiny):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    assert cli.main(["evaluate", "--config", str(ini)]) == 0
    assert cli.main(["evaluate", "--config", str(ini)]) == 0
    first, second = rows(out / "reports.csv")
    first.pop("runtime_seconds"), second.pop("runtime_seconds")
    assert first == second


def test_cli_export_marks_forget_examples(tiny):
    ini, out = tiny
    assert cli.main(["pretrain", "--config", str(ini)]) == 0
    assert cli.main(["export-plots", "--config", str(ini)]) == 0
    from siamunlearn import experiments as ex
    cfg = load_config(ini)
    split = ex.make_split(cfg, ex.load_datasets(cfg)[0])
    forget = set(split.forget_indices.tolist())
    proj = rows(out / "plots/original-seed0/projection.csv")
    assert len(proj) == 4 * 2
    assert all((int(r["example_id"]) in forget) == (r["is_forget"] == "1") for r in proj)
    assert any(r["is_forget"] == "1" for r in proj) and any(r["is_forget"] == "0" for r in proj)
