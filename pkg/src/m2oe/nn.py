"""Parameter containers: a tiny module base class and the dense layers built on it."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import RngState
from .tensor import Tensor

INIT_STD = 0.02


def normal_param(rng: RngState, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(shape, std), requires_grad=True)


def zero_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Attributes that are Tensors with ``requires_grad``, Modules, or lists of
    Modules are discovered in assignment order by ``named_parameters``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if p.values.shape != state[name].shape:
                raise ValueError(f"{name}: expected shape {p.values.shape}, got {state[name].shape}")
            p.values[...] = state[name]


class Linear(Module):
    def __init__(self, rng: RngState, n_in: int, n_out: int, bias: bool = True,
                 std: float = INIT_STD):
        self.weight = normal_param(rng, (n_in, n_out), std)
        self.bias = zero_param((n_out,)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = zero_param((dim,))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift)


class MLP(Module):
    """Linear -> LeakyReLU -> Linear."""

    def __init__(self, rng: RngState, n_in: int, n_hidden: int, n_out: int, slope: float,
                 std: float = INIT_STD):
        self.inner = Linear(rng, n_in, n_hidden, std=std)
        self.outer = Linear(rng, n_hidden, n_out, std=std)
        self.slope = slope

    def __call__(self, x) -> Tensor:
        return self.outer(T.leaky_relu(self.inner(x), self.slope))
