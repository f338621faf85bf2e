"""Noise schedules, forward noising, posterior algebra and reverse samplers.

Timesteps are 1-indexed (``t = 1..T``); every schedule array has length
``T + 1`` with index 0 holding the ``t = 0`` convention ``alpha_bar_0 = 1``
so that the posterior variance at ``t = 1`` is exactly zero.

Functions accept scalar ``t`` or an integer array of per-sample timesteps
(one per leading batch entry) and operate on plain numpy arrays; sampling
never needs gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fdiff.errors import InvalidPlan, InvalidSchedule, InvalidTimestep, NumericalFailure, ShapeMismatch
from fdiff.numerics.rng import SeededRng


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_variance: np.ndarray
    posterior_coef_x0: np.ndarray
    posterior_coef_xt: np.ndarray

    def check_t(self, t, lo: int = 1) -> np.ndarray:
        arr = np.asarray(t)
        if arr.dtype.kind not in "iu" or np.any(arr < lo) or np.any(arr > self.T):
            raise InvalidTimestep(f"timestep {t} outside [{lo}, {self.T}]")
        return arr


def build_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise InvalidSchedule(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidSchedule(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T > 1 and beta_start == beta_end:
        raise InvalidSchedule("betas must be strictly increasing")
    betas = np.zeros(T + 1)
    if T == 1:
        betas[1] = beta_start
    else:
        i = np.arange(T)
        betas[1:] = beta_start + i * (beta_end - beta_start) / (T - 1)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    ab_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    post_var = np.zeros(T + 1)
    coef_x0 = np.zeros(T + 1)
    coef_xt = np.zeros(T + 1)
    one_minus = 1.0 - alpha_bars[1:]
    post_var[1:] = (1.0 - ab_prev[1:]) / one_minus * betas[1:]
    coef_x0[1:] = np.sqrt(ab_prev[1:]) * betas[1:] / one_minus
    coef_xt[1:] = np.sqrt(alphas[1:]) * (1.0 - ab_prev[1:]) / one_minus
    post_var[1] = 0.0
    for arr in (betas, alphas, alpha_bars, post_var, coef_x0, coef_xt):
        arr.setflags(write=False)
    return NoiseSchedule(T, betas, alphas, alpha_bars, post_var, coef_x0, coef_xt)


def _coef(arr: np.ndarray, t, ndim: int) -> np.ndarray | float:
    """Look up ``arr[t]`` and shape it to broadcast over a batch of rank ``ndim``."""
    t = np.asarray(t)
    if t.ndim == 0:
        return float(arr[int(t)])
    return arr[t].reshape((-1,) + (1,) * (ndim - 1))


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Draw ``x_t`` from ``q(x_t | x_0)`` by reparameterisation with the given noise."""
    _check_same(x0, eps, "q_sample")
    sched.check_t(t)
    ab = _coef(sched.alpha_bars, t, np.ndim(x0))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_params(x0: np.ndarray, x_t: np.ndarray, t, sched: NoiseSchedule):
    """Mean and variance of the tractable posterior ``q(x_{t-1} | x_t, x_0)``."""
    _check_same(x0, x_t, "posterior_params")
    sched.check_t(t)
    nd = np.ndim(x0)
    mean = _coef(sched.posterior_coef_x0, t, nd) * x0 + _coef(sched.posterior_coef_xt, t, nd) * x_t
    return mean, _coef(sched.posterior_variance, t, nd)


def posterior_mean_from_eps(x_t: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Posterior mean written in terms of the noise that produced ``x_t``."""
    _check_same(x_t, eps, "posterior_mean_from_eps")
    sched.check_t(t)
    nd = np.ndim(x_t)
    a = _coef(sched.alphas, t, nd)
    ab = _coef(sched.alpha_bars, t, nd)
    return (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)


def x0_eps_convert(direction: str, x_t: np.ndarray, t, value: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Convert between a noise estimate and an ``x_0`` estimate at step ``t``.

    ``direction="eps_to_x0"`` maps ``value`` (noise) to ``x_0``;
    ``direction="x0_to_eps"`` maps ``value`` (``x_0``) to the noise.
    """
    _check_same(x_t, value, "x0_eps_convert")
    sched.check_t(t)
    ab = _coef(sched.alpha_bars, t, np.ndim(x_t))
    if np.any(np.asarray(ab) < 1e-30):
        raise NumericalFailure("alpha_bar underflow; conversion is ill-conditioned")
    if direction == "eps_to_x0":
        return (x_t - np.sqrt(1.0 - ab) * value) / np.sqrt(ab)
    if direction == "x0_to_eps":
        return (x_t - np.sqrt(ab) * value) / np.sqrt(1.0 - ab)
    raise ValueError(f"unknown direction {direction!r}")


def ddpm_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule,
              rng: SeededRng | None = None) -> np.ndarray:
    """One ancestral step with the reverse variance fixed to the posterior variance."""
    _check_same(x_t, eps_hat, "ddpm_step")
    t = int(sched.check_t(t))
    mean = posterior_mean_from_eps(x_t, t, eps_hat, sched)
    if t == 1:
        return mean
    if rng is None:
        raise ValueError("ddpm_step needs an rng for t > 1")
    z = rng.normal(np.shape(x_t)).astype(np.asarray(x_t).dtype, copy=False)
    return mean + np.sqrt(sched.posterior_variance[t]) * z


@dataclass(frozen=True)
class SamplerPlan:
    kind: str
    timesteps: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self):
        ts = self.timesteps
        if not ts or any(b >= a for a, b in zip(ts, ts[1:])) or ts[-1] < 1:
            raise InvalidPlan(f"timesteps must be strictly decreasing and >= 1, got {ts}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidPlan(f"eta must be in [0, 1], got {self.eta}")

    def pairs(self) -> list[tuple[int, int]]:
        """``(t, t_prev)`` pairs; the final step lands on ``t_prev = 0``."""
        ts = list(self.timesteps)
        return list(zip(ts, ts[1:] + [0]))


def ddim_plan(T: int, S: int, eta: float = 0.0) -> SamplerPlan:
    """``S`` timesteps with uniform stride ``T // S`` counted down from ``T``."""
    if not 1 <= S <= T:
        raise InvalidPlan(f"need 1 <= S <= T, got S={S}, T={T}")
    stride = T // S
    return SamplerPlan("ddim", tuple(T - i * stride for i in range(S)), eta)


def ddpm_plan(T: int) -> SamplerPlan:
    return SamplerPlan("ddpm", tuple(range(T, 0, -1)))


def ddim_step(x_t: np.ndarray, t: int, t_prev: int, x0_hat: np.ndarray, sched: NoiseSchedule,
              eta: float = 0.0, rng: SeededRng | None = None) -> np.ndarray:
    """Jump from ``t`` to ``t_prev`` given an ``x_0`` estimate (``eta=0`` is deterministic)."""
    _check_same(x_t, x0_hat, "ddim_step")
    if not (isinstance(t, (int, np.integer)) and isinstance(t_prev, (int, np.integer))) or not 0 <= t_prev < t:
        raise InvalidPlan(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    sched.check_t(t)
    ab_t = sched.alpha_bars[t]
    ab_prev = 1.0 if t_prev == 0 else sched.alpha_bars[t_prev]
    eps_hat = x0_eps_convert("x0_to_eps", x_t, t, x0_hat, sched)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    dir_coef = np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0))
    out = np.sqrt(ab_prev) * x0_hat + dir_coef * eps_hat
    if sigma > 0:
        if rng is None:
            raise ValueError("ddim_step with eta > 0 needs an rng")
        out = out + sigma * rng.normal(np.shape(x_t)).astype(np.asarray(x_t).dtype, copy=False)
    return out
