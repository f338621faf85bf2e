"""Minimal parameter containers used by the network components.

Parameters are :class:`Tensor` attributes with ``requires_grad=True``;
buffers (batch-norm running statistics) are :class:`Tensor` attributes with
``requires_grad=False``. Child modules may be attributes or lists of
modules; traversal follows attribute insertion order so names are stable.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from fdiff.errors import ShapeMismatch
from fdiff.numerics import ops
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


class Module:
    training: bool = True

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_tensors(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.named_tensors(prefix) if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.named_tensors(prefix) if not t.requires_grad)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_tensors())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in own:
                continue
            t = own[name]
            if t.data.shape != arr.shape:
                raise ShapeMismatch(f"{name}: expected {t.data.shape}, got {arr.shape}")
            t.data = np.array(arr, dtype=t.data.dtype)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for _, t in self.named_tensors():
            t.data = t.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: SeededRng, stride: int = 1,
                 padding: int | None = None, bias: bool = True):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k ** 3
        self.weight = Tensor(rng.normal((c_out, c_in, k, k, k)) * np.sqrt(2.0 / fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm3d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm3d(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
                               train=self.training, eps=self.eps, momentum=self.momentum)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: SeededRng):
        self.weight = Tensor(rng.normal((n_in, n_out)) * np.sqrt(1.0 / n_in), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
