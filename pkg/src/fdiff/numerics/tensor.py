"""Dense tensors recorded on an implicit tape for reverse-mode autodiff.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`fdiff.numerics.ops`
create new tensors that keep references to their inputs together with a
closure mapping the output gradient to input gradients. :func:`backprop`
linearises that graph into a :class:`Tape` (topological order) and walks it
backwards once.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from fdiff.errors import InvalidShape, NotScalar, NumericalFailure

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype.kind not in "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericalFailure(f"non-finite values produced by {op}")
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Tape":
        return backprop(self)

    # Operator sugar; implementations live in ops to keep one gradient rule per op.
    def __add__(self, other):
        from fdiff.numerics import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from fdiff.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from fdiff.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from fdiff.numerics import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from fdiff.numerics import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from fdiff.numerics import ops
        return ops.div(other, self)

    def __neg__(self):
        from fdiff.numerics import ops
        return ops.neg(self)

    def __getitem__(self, index):
        from fdiff.numerics import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from fdiff.numerics import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from fdiff.numerics import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from fdiff.numerics import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


@dataclass
class Tape:
    """Recorded operations in topological order (inputs before outputs)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def backprop(loss: Tensor, tape: Tape | None = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Gradients add onto existing ``grad`` buffers, so repeated calls without
    ``zero_grad`` accumulate.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backprop needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


def tensor_create(shape, fill="zeros", value: float = 0.0, rng=None, dtype=np.float64,
                  requires_grad: bool = False) -> Tensor:
    """Create a tensor filled with zeros, ones, a constant, or N(0, 1) draws."""
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidShape(f"all dimensions must be >= 1, got {shape}")
    if fill == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif fill == "ones":
        data = np.ones(shape, dtype=dtype)
    elif fill == "constant":
        data = np.full(shape, value, dtype=dtype)
    elif fill == "gaussian":
        if rng is None:
            raise ValueError("gaussian fill needs an rng")
        data = rng.normal(shape).astype(dtype, copy=False)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad)
