"""Backbones, the predictor head and the Network pairing them."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .core import nn
from .core.tensor import Tensor
from .errors import ConfigError, DimensionError

ARCHITECTURES = ("mlp", "smallconv")


@dataclass(frozen=True)
class ArchConfig:
    name: str = "smallconv"
    widths: tuple[int, ...] = (8, 16)

    def __post_init__(self):
        if self.name not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.name!r}; expected one of {ARCHITECTURES}")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError(f"layer widths must be positive, got {self.widths}")


def build_backbone(arch: ArchConfig, image_shape: tuple[int, int, int], class_count: int,
                   seed: int, dtype=np.float32) -> nn.Module:
    """``mlp``: flatten, then Linear+ReLU per width, then a K-way Linear.

    ``smallconv``: per width a 3x3 conv, batch norm, ReLU and 2x2 average
    pooling; the final feature map is flattened into a K-way Linear, which
    keeps spatial layout available to the classifier.
    """
    rng = np.random.default_rng([seed, 0xB0])
    c, h, w = image_shape
    layers: list[nn.Module] = []
    if arch.name == "mlp":
        layers.append(nn.Flatten())
        width_in = c * h * w
        for width in arch.widths:
            layers += [nn.Linear(width_in, width, rng, dtype), nn.ReLU()]
            width_in = width
    else:
        width_in = c
        for width in arch.widths:
            if h % 2 or w % 2:
                raise ConfigError(f"smallconv cannot pool a {h}x{w} feature map")
            layers += [nn.Conv2d(width_in, width, 3, rng, padding=1, dtype=dtype),
                       nn.BatchNorm(width, dtype=dtype), nn.ReLU(), nn.AvgPool2d(2)]
            h, w = h // 2, w // 2
            width_in = width
        layers.append(nn.Flatten())
        width_in = width_in * h * w
    layers.append(nn.Linear(width_in, class_count, rng, dtype))
    return nn.Sequential(*layers)


class Predictor(nn.Sequential):
    """Two fully connected layers with batch norm and ReLU in between."""

    def __init__(self, class_count: int, hidden: int = 64, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng([seed, 0xB1])
        super().__init__(nn.Linear(class_count, hidden, rng, dtype),
                         nn.BatchNorm(hidden, dtype=dtype), nn.ReLU(),
                         nn.Linear(hidden, class_count, rng, dtype))


@dataclass
class Network:
    """A backbone producing logits plus an optional predictor head.

    ``predictor is None`` means no head is attached yet (a freshly
    pretrained model).
    """

    backbone: nn.Module
    class_count: int
    arch: ArchConfig = field(default_factory=ArchConfig)
    image_shape: tuple[int, int, int] = (3, 16, 16)
    predictor: nn.Module | None = None

    @classmethod
    def create(cls, arch: ArchConfig, image_shape, class_count: int, seed: int,
               dtype=np.float32) -> Network:
        return cls(build_backbone(arch, tuple(image_shape), class_count, seed, dtype),
                   class_count, arch, tuple(image_shape))

    def __call__(self, x: Tensor) -> Tensor:
        return self.backbone(x)

    def predict(self, logits: Tensor) -> Tensor:
        if self.predictor is None:
            raise ConfigError("network has no predictor head attached")
        return self.predictor(logits)

    def attach_predictor(self, hidden: int = 64, seed: int = 0) -> None:
        dtype = next(iter(self.backbone.parameters())).dtype
        self.predictor = Predictor(self.class_count, hidden, seed, dtype)

    def modules(self) -> list[nn.Module]:
        return [self.backbone] + ([self.predictor] if self.predictor is not None else [])

    def named_parameters(self):
        yield from self.backbone.named_parameters("backbone.")
        if self.predictor is not None:
            yield from self.predictor.named_parameters("predictor.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> Network:
        for m in self.modules():
            m.train(mode)
        return self

    def eval(self) -> Network:
        return self.train(False)

    def state_dict(self, include_predictor: bool = True) -> dict[str, np.ndarray]:
        state = {f"backbone.{k}": v for k, v in self.backbone.state_dict().items()}
        if include_predictor and self.predictor is not None:
            state.update({f"predictor.{k}": v for k, v in self.predictor.state_dict().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        back = {k[len("backbone."):]: v for k, v in state.items() if k.startswith("backbone.")}
        pred = {k[len("predictor."):]: v for k, v in state.items() if k.startswith("predictor.")}
        stray = [k for k in state if not k.startswith(("backbone.", "predictor."))]
        if stray:
            raise DimensionError(f"unexpected arrays in checkpoint: {stray}")
        self.backbone.load_state_dict(back)
        if pred:
            if self.predictor is None:
                hidden = pred["0.weight"].shape[0]
                self.attach_predictor(hidden)
            self.predictor.load_state_dict(pred)

    def copy(self) -> Network:
        return copy.deepcopy(self)

    def to_dtype(self, dtype) -> Network:
        for m in self.modules():
            m.to_dtype(dtype)
        return self
