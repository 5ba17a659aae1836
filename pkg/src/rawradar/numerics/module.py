"""Minimal layer container with deterministic parameter naming."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data), requires_grad=True, name=name)


class Module:
    """Base class: parameters are trainable-leaf attributes, children are Modules.

    Names follow attribute insertion order, so two identically constructed
    models enumerate parameters identically.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (e.g. running statistics), keyed by dotted name."""
        out: dict[str, np.ndarray] = {}
        self._collect_buffers("", out)
        return out

    def _collect_buffers(self, prefix: str, out: dict) -> None:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                val._collect_buffers(f"{prefix}{key}.", out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect_buffers(f"{prefix}{key}.{i}.", out)
        for key in getattr(self, "_buffer_names", ()):
            out[f"{prefix}{key}"] = getattr(self, key)

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        for name, arr in buffers.items():
            *path, leaf = name.split(".")
            mod = self
            for part in path:
                mod = mod[int(part)] if isinstance(mod, (list, tuple)) else getattr(mod, part)
            setattr(mod, leaf, np.array(arr))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def flop_records(self, in_shape: tuple) -> tuple[tuple, list]:
        """Static operation list for FLOP counting: ``(out_shape, records)``."""
        raise NotImplementedError(type(self).__name__)


def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None):
        w = trunc_normal(rng, (n_in, n_out), std) if std else init_uniform(rng, n_in, (n_in, n_out))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(n_out)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)

    def flop_records(self, in_shape):
        tokens = int(np.prod(in_shape[:-1]))
        out = tuple(in_shape[:-1]) + (self.n_out,)
        return out, [("dense", tokens * self.n_in * self.n_out)]


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)

    def flop_records(self, in_shape):
        return tuple(in_shape), [("elementwise", 5 * int(np.prod(in_shape)))]


class Conv2d(Module):
    """Channels-last stride-1 'same' convolution."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3,
                 bias: bool = True):
        fan_in = kernel * kernel * c_in
        self.weight = parameter(init_uniform(rng, fan_in, (kernel, kernel, c_in, c_out)))
        self.bias = parameter(np.zeros(c_out)) if bias else None
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias)

    def flop_records(self, in_shape):
        *lead, _ = in_shape
        pixels = int(np.prod(lead))
        return tuple(lead) + (self.c_out,), [("conv", pixels * self.kernel ** 2 * self.c_in * self.c_out)]
