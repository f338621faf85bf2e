"""Multi-scale channel attention and the attention-fusion operators built on it.

MS-CAM produces gating weights ``M(x) = sigmoid(L(x) + G(x))`` where the
local branch ``L`` and the globally pooled branch ``G`` are each a
``PWConv -> BN -> ReLU -> PWConv -> BN`` stack of 1x1x1 convolutions.
Fusion blends two tensors with those weights::

    af(X, Y)  = M(X + Y) * Y + (1 - M(X + Y)) * X
    iaf(X, Y) = M2(af(X, Y)) * Y + (1 - M2(af(X, Y))) * X

Blends are evaluated as ``X + M * (Y - X)``, the same function, which keeps
``af(X, X) == X`` exact in floating point.
"""
from __future__ import annotations

from typing import Callable, Sequence

from fdiff.errors import EmptyTrajectory, InvalidReduction, ShapeMismatch
from fdiff.numerics import ops
from fdiff.numerics.nn import BatchNorm3d, Conv3d, Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


class _PointwiseBranch(Module):
    def __init__(self, channels: int, hidden: int, rng: SeededRng):
        self.pwconv1 = Conv3d(channels, hidden, 1, rng)
        self.bn1 = BatchNorm3d(hidden)
        self.pwconv2 = Conv3d(hidden, channels, 1, rng)
        self.bn2 = BatchNorm3d(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1(self.pwconv1(x)))
        return self.bn2(self.pwconv2(h))


class MsCam(Module):
    """Parameters of one multi-scale channel attention block."""

    def __init__(self, channels: int, r: int = 4, rng: SeededRng | None = None):
        if r < 1 or channels % r != 0:
            raise InvalidReduction(f"channels ({channels}) must be divisible by r ({r})")
        rng = rng or SeededRng(0)
        self.channels = channels
        self.r = r
        hidden = channels // r
        self.local = _PointwiseBranch(channels, hidden, rng)
        self.global_ = _PointwiseBranch(channels, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return mscam_weights(x, self, train=self.training)


def mscam_weights(x: Tensor, params: MsCam, train: bool | None = None) -> Tensor:
    """Attention weights in (0, 1) with the same shape as ``x``."""
    caxis = 1 if x.ndim == 5 else 0
    if x.ndim not in (4, 5) or x.shape[caxis] != params.channels:
        raise ShapeMismatch(f"input {x.shape} does not match MS-CAM with {params.channels} channels")
    if train is not None:
        params.train(train)
    local = params.local(x)
    glob = params.global_(ops.global_avg_pool3d(x))
    return ops.sigmoid(ops.add(local, glob))


def _blend(x: Tensor, y: Tensor, weights: Tensor) -> Tensor:
    return ops.add(x, ops.mul(weights, ops.sub(y, x)))


def _check_pair(x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeMismatch(f"fusion operands differ: {x.shape} vs {y.shape}")


def af(x: Tensor, y: Tensor, params: MsCam) -> Tensor:
    _check_pair(x, y)
    return _blend(x, y, params(ops.add(x, y)))


def iaf(x: Tensor, y: Tensor, params_stage1: MsCam, params_stage2: MsCam) -> Tensor:
    _check_pair(x, y)
    initial = af(x, y, params_stage1)
    return _blend(x, y, params_stage2(initial))


class AttentionFusion(Module):
    def __init__(self, channels: int, r: int = 4, rng: SeededRng | None = None):
        self.cam = MsCam(channels, r, rng)

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        return af(x, y, self.cam)


class IterativeAttentionFusion(Module):
    def __init__(self, channels: int, r: int = 4, rng: SeededRng | None = None):
        rng = rng or SeededRng(0)
        self.stage1 = MsCam(channels, r, rng)
        self.stage2 = MsCam(channels, r, rng)

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        return iaf(x, y, self.stage1, self.stage2)


def fuse_trajectory(preds: Sequence[Tensor], fuse: Callable[[Tensor, Tensor], Tensor] | None) -> Tensor:
    """Left fold ``acc = fuse(acc, p)`` over predictions in sampling order.

    With ``fuse=None`` (no fusion module) the last prediction is returned.
    """
    if not preds:
        raise EmptyTrajectory("no predictions to fuse")
    if fuse is None:
        return preds[-1]
    acc = preds[0]
    for p in preds[1:]:
        acc = fuse(acc, p)
    return acc
