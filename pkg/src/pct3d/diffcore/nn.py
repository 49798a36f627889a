"""Minimal layer containers on top of the differentiable ops."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Module:
    """Base container.

    Parameters, sub-modules and lists of sub-modules assigned as attributes are
    discovered in assignment order, which fixes parameter naming and the
    checkpoint layout.
    """

    training = True

    def _children(self) -> Iterator[tuple]:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        """Parameters and buffers by name, in checkpoint order."""
        out = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def load_state_dict(self, state: dict):
        from ..errors import ConfigError

        params = dict(self.named_parameters())
        expected = set(params) | {n for n, _ in self.named_buffers()}
        missing = expected - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"checkpoint entry {name} has shape {arr.shape}, model expects {p.shape}", field=name)
            p.data[...] = arr
        for m_name, m in self._named_modules():
            if isinstance(m, BatchNorm):
                m.state.running_mean = np.array(state[f"{m_name}running_mean"], dtype=np.float64)
                m.state.running_var = np.array(state[f"{m_name}running_var"], dtype=np.float64)

    def _named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val._named_modules(f"{prefix}{key}.")


class Linear(Module):
    """``y = x @ W (+ b)`` with ``W`` of shape (in, out)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, fan_in, fan_out))
        self.bias = Parameter(np.zeros(fan_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.bias is not None else y


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.state = ops.BatchNormState.fresh(channels)

    def named_buffers(self, prefix: str = ""):
        yield f"{prefix}running_mean", self.state.running_mean
        yield f"{prefix}running_var", self.state.running_var

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.state, "train" if self.training else "eval")


class LBR(Module):
    """Linear (no bias, batch-norm supplies the shift) -> BatchNorm -> ReLU."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.linear = Linear(fan_in, fan_out, rng, bias=False)
        self.bn = BatchNorm(fan_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.linear(x)))


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return ops.scale(x, keep / (1.0 - p))


def param_count(params) -> int:
    return sum(int(p.size) for p in params)
