"""Experiment configuration and its flat ``key = value`` text format.

A config file has one section per concern::

    [data]
    kind = blobs
    classes = 3
    ...
    [unlearn]
    method = siamese
    lam = 1.0

Every field has a default, so a file only needs the keys it changes.
Tuples are written comma separated (an empty value is the empty tuple),
``None`` as ``auto`` (every optional field is derived when unset) and
booleans as ``true``/``false``. Floats use ``repr`` so the text
round-trips exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import FAMILIES, AugPipeline
from .core.optim import SgdConfig
from .datasets import Scenario, default_probe_size
from .errors import ConfigError
from .evaluation import EvalSettings
from .models import ArchConfig
from .training import TrainConfig
from .unlearn import UnlearnConfig

METHODS = ("siamese", "retrain", "finetune", "neggrad", "randlab", "amnesiac")


@dataclass(frozen=True)
class DataSection:
    # empty paths mean "generate synthetically from the fields below"
    train_path: str = ""
    test_path: str = ""
    kind: str = "blobs"
    classes: int = 3
    per_class: int = 200
    image_size: int = 16
    channels: int = 3
    noise: float = 0.15
    layout_seed: int = 0
    train_seed: int = 100
    test_seed: int = 200


@dataclass(frozen=True)
class ModelSection:
    arch: str = "smallconv"
    widths: tuple[int, ...] = (8, 16)

    def arch_config(self) -> ArchConfig:
        return ArchConfig(self.arch, self.widths)


@dataclass(frozen=True)
class AugmentSection:
    family: str = "simple"
    crop_padding: int | None = None
    flip_prob: float = 0.5
    resize_scale: tuple[float, ...] = (0.2, 1.0)
    resize_ratio: tuple[float, ...] = (3 / 4, 4 / 3)
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 1.0
    blur_sigma: tuple[float, ...] = (0.1, 2.0)
    cutout_size: int | None = None

    def pipeline(self, base_seed: int = 0) -> AugPipeline:
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for pair in ("resize_scale", "resize_ratio", "blur_sigma"):
            if len(kw[pair]) != 2:
                raise ConfigError(f"augment.{pair} needs two values, got {kw[pair]}")
        return AugPipeline(base_seed=base_seed, **kw)


@dataclass(frozen=True)
class ScenarioSection:
    kind: str = "full_class"
    classes: tuple[int, ...] = (1,)
    fraction: float = 1.0
    # 0: 10% of the retained set, capped at 1000
    probe_size: int = 0

    def scenario(self) -> Scenario:
        if self.kind == "random":
            return Scenario("random", (), self.fraction)
        return Scenario(self.kind, self.classes, self.fraction)

    def resolved_probe_size(self, retained: int) -> int:
        return self.probe_size or default_probe_size(retained)


@dataclass(frozen=True)
class PretrainSection:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: int = 1
    # None: scale 60/120/160 of 200 to ``epochs``
    milestones: tuple[int, ...] | None = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size,
                           SgdConfig(self.learning_rate, self.momentum, self.weight_decay),
                           self.warmup_epochs, self.milestones)


@dataclass(frozen=True)
class UnlearnSection:
    method: str = "siamese"
    lam: float = 1.0
    epochs: int = 40
    batch_forget: int = 32
    batch_retain: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    use_kvc: bool = True
    use_ce: bool = True
    use_alp: bool = True
    predictor_hidden: int = 64

    def unlearn_config(self) -> UnlearnConfig:
        return UnlearnConfig(self.lam, self.epochs, self.batch_forget, self.batch_retain,
                             SgdConfig(self.learning_rate, self.momentum, self.weight_decay),
                             self.method, self.use_kvc, self.use_ce, self.use_alp,
                             self.predictor_hidden)


@dataclass(frozen=True)
class BaselineSection:
    """Constant-rate schedule shared by Finetune, NegGrad, RandLab and Amnesiac.

    Retrain reuses the pretraining schedule instead.
    """

    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size,
                           SgdConfig(self.learning_rate, self.momentum, self.weight_decay),
                           warmup_epochs=0, milestones=())


@dataclass(frozen=True)
class EvalSection:
    kl_views: int = 100
    kl_examples: int = 50
    mia_seed: int = 0
    # export-plots: examples per set, views per example, histogram bins
    export_samples: int = 10
    export_views: int = 20
    histogram_bins: int = 20

    def settings(self) -> EvalSettings:
        return EvalSettings(self.kl_views, self.kl_examples, self.mia_seed)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"


SECTIONS = {
    "data": DataSection, "model": ModelSection, "augment": AugmentSection,
    "scenario": ScenarioSection, "pretrain": PretrainSection, "unlearn": UnlearnSection,
    "baseline": BaselineSection, "eval": EvalSection, "run": RunSection,
}
# Keys left out of the config hash. Seed and method select a subdirectory of
# one experiment (and are recorded next to every result); out_dir is where
# the experiment lives, not what it is.
_UNHASHED = {("run", "out_dir"), ("run", "seed"), ("unlearn", "method")}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.augment.family not in FAMILIES:
            raise ConfigError(f"unknown augmentation family {self.augment.family!r}; expected one of {FAMILIES}")
        if self.unlearn.method not in METHODS:
            raise ConfigError(f"unknown method {self.unlearn.method!r}; valid methods: {', '.join(METHODS)}")
        if self.data.kind not in ("blobs", "rings") and not self.data.train_path:
            raise ConfigError(f"unknown synthetic kind {self.data.kind!r}; expected blobs or rings")
        if self.scenario.probe_size < 0:
            raise ConfigError(f"probe_size must be non-negative, got {self.scenario.probe_size}")
        # building the derived objects runs their own validation
        self.model.arch_config()
        self.augment.pipeline()
        self.scenario.scenario()
        self.pretrain.train_config()
        self.unlearn.unlearn_config()
        self.baseline.train_config()

    def to_text(self, hashed_only: bool = False) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                if hashed_only and (name, f.name) in _UNHASHED:
                    continue
                lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> ExperimentConfig:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        unknown = [s for s in parser.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigError(f"{source}: unknown section(s) {unknown}; expected {list(SECTIONS)}")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = dict(parser[name]) if parser.has_section(name) else {}
            hints = typing.get_type_hints(section_cls)
            known = {f.name for f in fields(section_cls)}
            extra = sorted(set(values) - known)
            if extra:
                raise ConfigError(f"{source}: unknown key(s) {extra} in [{name}]; expected {sorted(known)}")
            parsed = {k: _parse(v, hints[k], f"{name}.{k}") for k, v in values.items()}
            kwargs[name] = section_cls(**parsed)
        return cls(**kwargs)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text(hashed_only=True).encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, method: str | None = None,
                       out_dir: str | None = None) -> ExperimentConfig:
        run, unlearn = self.run, self.unlearn
        if seed is not None:
            run = replace(run, seed=seed)
        if out_dir is not None:
            run = replace(run, out_dir=out_dir)
        if method is not None:
            unlearn = replace(unlearn, method=method)
        return replace(self, run=run, unlearn=unlearn)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return ExperimentConfig.from_text(text, str(path))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_text())


def paper_preset() -> ExperimentConfig:
    """The pretraining schedule, unlearning optimizer and probe size reported for the CIFAR runs."""
    return ExperimentConfig(
        pretrain=PretrainSection(epochs=200, batch_size=128, learning_rate=0.001, momentum=0.0,
                                 weight_decay=1e-4, warmup_epochs=2, milestones=(60, 120, 160)),
        scenario=ScenarioSection(probe_size=1000),
        unlearn=UnlearnSection(learning_rate=1e-4, momentum=0.9, weight_decay=1e-4),
    )


# ----------------------------------------------------------------- value codec

def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, hint, key: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if text.lower() == "auto":
            return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    try:
        if origin is tuple:
            return tuple(_parse(part, args[0], key) for part in text.split(",") if part.strip())
        if hint is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {getattr(hint, '__name__', hint)}") from None
