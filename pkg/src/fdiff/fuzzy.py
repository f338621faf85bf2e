"""Fuzzy learning layer for U-Net skip paths.

Each channel ``c`` owns ``M`` Gaussian membership functions with centre
``mu[k, c]`` and width ``sigma[k, c]``, shared by every voxel of the channel.
Memberships are combined with a product AND-rule and the result is fused
with the incoming features through two independent batch norms::

    m[k]  = exp(-(f - mu[k])**2 / sigma[k]**2)      # no 1/2 factor
    a     = prod_k m[k]
    out   = BN_a(a) + BN_b(f)
"""
from __future__ import annotations

import numpy as np

from fdiff.errors import ShapeMismatch
from fdiff.numerics import ops
from fdiff.numerics.nn import BatchNorm3d, Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor

SIGMA_MIN = 1e-3
LOG_SPACE_THRESHOLD = 8


class FuzzyLayer(Module):
    """Learnable membership parameters plus the two residual batch norms."""

    def __init__(self, channels: int, M: int = 5, rng: SeededRng | None = None, sigma_init: float = 1.0):
        if M < 1:
            raise ValueError(f"M must be >= 1, got {M}")
        rng = rng or SeededRng(0)
        self.M = M
        self.C = channels
        self.mu = Tensor(rng.normal((M, channels)), requires_grad=True)
        self.sigma = Tensor(np.full((M, channels), float(sigma_init)), requires_grad=True)
        self.bn_fuzzy = BatchNorm3d(channels)
        self.bn_identity = BatchNorm3d(channels)

    def clamp_(self) -> None:
        np.maximum(self.sigma.data, SIGMA_MIN, out=self.sigma.data)

    def __call__(self, f: Tensor) -> Tensor:
        return flm_forward(f, self, train=self.training)


def _channel_axis(f: Tensor) -> int:
    return 1 if f.ndim == 5 else 0


def _param_view(p: np.ndarray, f: Tensor) -> np.ndarray:
    """Reshape ``[M, C]`` parameters to broadcast against ``[M, *f.shape]``."""
    shape = [p.shape[0]] + [1] * f.ndim
    shape[1 + _channel_axis(f)] = p.shape[1]
    return p.reshape(shape)


def _check_channels(f: Tensor, params: FuzzyLayer) -> None:
    if f.ndim not in (4, 5) or f.shape[_channel_axis(f)] != params.C:
        raise ShapeMismatch(f"features {f.shape} do not match {params.C} fuzzy channels")


def _reduce_to_params(g: np.ndarray, f: Tensor) -> np.ndarray:
    caxis = 1 + _channel_axis(f)
    axes = tuple(a for a in range(1, g.ndim) if a != caxis)
    return g.sum(axis=axes)


def flm_membership(f: Tensor, params: FuzzyLayer) -> Tensor:
    """Gaussian memberships, shape ``[M, *f.shape]``, values in (0, 1]."""
    _check_channels(f, params)
    mu = _param_view(params.mu.data, f).astype(f.dtype, copy=False)
    sig = _param_view(params.sigma.data, f).astype(f.dtype, copy=False)
    diff = f.data[None] - mu
    inv_var = 1.0 / (sig * sig)
    m = np.exp(-(diff * diff) * inv_var)

    def backward(g):
        gm = g * m
        d_mu = 2.0 * gm * diff * inv_var
        d_sigma = 2.0 * gm * diff * diff * inv_var / sig
        return (-d_mu.sum(axis=0),
                _reduce_to_params(d_mu, f).astype(params.mu.dtype),
                _reduce_to_params(d_sigma, f).astype(params.sigma.dtype))

    return Tensor._from_op(m, (f, params.mu, params.sigma), backward, "flm_membership")


def flm_and_rule(memberships: Tensor, log_space: bool | None = None) -> Tensor:
    """Product AND over the leading membership axis.

    ``log_space`` sums log-memberships before a single ``exp``; by default it
    switches on for ``M > 8`` where the direct product risks underflow.
    """
    if memberships.shape[0] < 1:
        raise ValueError("need at least one membership map")
    if log_space is None:
        log_space = memberships.shape[0] > LOG_SPACE_THRESHOLD
    if log_space:
        return ops.exp(ops.sum(ops.log(memberships), axis=0))
    return ops.prod(memberships, axis=0)


def _log_and(f: Tensor, params: FuzzyLayer) -> Tensor:
    """AND-rule evaluated from log-memberships directly, skipping the exp/log pair."""
    mu = _param_view(params.mu.data, f).astype(f.dtype, copy=False)
    sig = _param_view(params.sigma.data, f).astype(f.dtype, copy=False)
    diff = f.data[None] - mu
    inv_var = 1.0 / (sig * sig)
    out = np.exp(-(diff * diff * inv_var).sum(axis=0))

    def backward(g):
        go = (g * out)[None]
        d_mu = 2.0 * go * diff * inv_var
        d_sigma = 2.0 * go * diff * diff * inv_var / sig
        return (-d_mu.sum(axis=0),
                _reduce_to_params(d_mu, f).astype(params.mu.dtype),
                _reduce_to_params(d_sigma, f).astype(params.sigma.dtype))

    return Tensor._from_op(out, (f, params.mu, params.sigma), backward, "flm_log_and")


def flm_forward(f: Tensor, params: FuzzyLayer, train: bool = True) -> Tensor:
    """Fuzzy residual block; output shape equals input shape."""
    _check_channels(f, params)
    if params.M > LOG_SPACE_THRESHOLD:
        fuzzy = _log_and(f, params)
    else:
        fuzzy = flm_and_rule(flm_membership(f, params), log_space=False)
    params.bn_fuzzy.training = train
    params.bn_identity.training = train
    return ops.add(params.bn_fuzzy(fuzzy), params.bn_identity(f))


def flm_param_grads(params: FuzzyLayer) -> dict[str, np.ndarray]:
    """Gradients of ``mu`` and ``sigma`` after backprop, with ``sigma`` projected.

    A positive ``sigma`` gradient at the ``SIGMA_MIN`` floor would push the
    width below the floor under descent; that component is zeroed.
    """
    g_mu = np.zeros_like(params.mu.data) if params.mu.grad is None else params.mu.grad.copy()
    g_sigma = np.zeros_like(params.sigma.data) if params.sigma.grad is None else params.sigma.grad.copy()
    at_floor = (params.sigma.data <= SIGMA_MIN) & (g_sigma > 0)
    g_sigma[at_floor] = 0.0
    return {"mu": g_mu, "sigma": g_sigma}
