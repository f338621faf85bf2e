"""Training objective: MSE + BCE + soft Dice on sigmoid probabilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fdiff.errors import InvalidLabel, ShapeMismatch
from fdiff.numerics import ops
from fdiff.numerics.tensor import Tensor

BCE_EPS = 1e-7
DICE_SMOOTH = 1e-5


@dataclass
class LossTerms:
    total: Tensor
    mse: float
    bce: float
    dice: float

    def as_row(self) -> dict[str, float]:
        return {"loss": self.total.item(), "mse": self.mse, "bce": self.bce, "dice": self.dice}


def _labels(x0, like: Tensor) -> Tensor:
    arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    if arr.shape != like.shape:
        raise ShapeMismatch(f"prediction {like.shape} vs label {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidLabel("labels must be binary {0, 1}")
    return Tensor(arr.astype(like.dtype, copy=False))


def loss_from_probs(p: Tensor, x0) -> LossTerms:
    """Combined loss for probabilities already in [0, 1] (e.g. fused maps)."""
    x = _labels(x0, p)
    mse = ops.mean(ops.square(ops.sub(p, x)))
    pc = ops.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    ll = ops.add(ops.mul(x, ops.log(pc)), ops.mul(ops.sub(1.0, x), ops.log(ops.sub(1.0, pc))))
    bce = ops.neg(ops.mean(ll))
    inter = ops.sum(ops.mul(p, x))
    denom = ops.add(ops.add(ops.sum(p), ops.sum(x)), DICE_SMOOTH)
    dice = ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), DICE_SMOOTH), denom))
    total = ops.add(ops.add(mse, bce), dice)
    return LossTerms(total, mse.item(), bce.item(), dice.item())


def total_loss(logits: Tensor, x0) -> LossTerms:
    return loss_from_probs(ops.sigmoid(logits), x0)
