"""Layers with named parameters, built on the tensor ops."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor


class Module:
    """Container with named parameters, buffers and child modules.

    Names are dotted paths (``"0.weight"``, ``"bn.running_mean"``) in
    registration order, which fixes the checkpoint layout.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_child(self, name: str, module: Module) -> Module:
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        expected = {n: v.shape for n, v in own.items()} | {n: b.shape for n, b in bufs.items()}
        got = {n: np.shape(v) for n, v in state.items()}
        if expected != got:
            raise DimensionError(describe_shape_diff(expected, got))
        for name, p in own.items():
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, b in bufs.items():
            b[...] = state[name]

    def to_dtype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for mod in self.modules():
            for name, b in list(mod._buffers.items()):
                mod._buffers[name] = b.astype(dtype)
        return self

    def modules(self) -> Iterator[Module]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


def describe_shape_diff(expected: dict, got: dict) -> str:
    lines = ["architecture mismatch:"]
    for name in sorted(set(expected) | set(got)):
        a, b = expected.get(name), got.get(name)
        if a != b:
            lines.append(f"  {name}: expected {a if a is not None else 'absent'}, "
                         f"checkpoint has {b if b is not None else 'absent'}")
    return "\n".join(lines)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, (out_features, in_features)).astype(dtype))
        self.bias = self.add_param("bias", rng.uniform(-bound, bound, out_features).astype(dtype))

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float32) -> None:
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        # He-uniform keeps ReLU activations well scaled
        bound = math.sqrt(6.0 / fan_in)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, shape).astype(dtype))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch norm over channel axis 1, for (N, C) or (N, C, H, W) inputs."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32) -> None:
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(num_features, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(num_features, dtype=dtype))
        self.add_buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.add_buffer("running_var", np.ones(num_features, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class AvgPool2d(Module):
    def __init__(self, size: int = 2) -> None:
        super().__init__()
        self.size = size

    def forward(self, x):
        return T.avg_pool2d(x, self.size)


class GlobalAvgPool(Module):
    def forward(self, x):
        return T.mean(x, axis=(2, 3))


class Flatten(Module):
    def forward(self, x):
        return T.flatten(x)


class Identity(Module):
    def forward(self, x):
        return x


class Sequential(Module):
    def __init__(self, *layers: Module) -> None:
        super().__init__()
        self.layers = [self.add_child(str(i), layer) for i, layer in enumerate(layers)]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
