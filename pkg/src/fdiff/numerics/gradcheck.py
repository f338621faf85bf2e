"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from fdiff.errors import NumericalFailure
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor, backprop


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tol: float
    skipped: list[tuple[int, ...]] = field(default_factory=list)
    worst_index: tuple[int, ...] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))


def _scalar(out: Tensor) -> float:
    value = float(np.asarray(out.data).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericalFailure("objective is not finite")
    return value


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6, tol: float = 1e-5,
               max_entries: int | None = None, rng: SeededRng | None = None,
               kink_margin: float | None = None,
               analytic: np.ndarray | None = None) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    ``x`` must be a leaf with ``requires_grad``; its data is perturbed in
    place and restored. Entries within ``kink_margin`` of zero (the ReLU
    kink) are skipped and listed in the report. ``max_entries`` checks a
    random subset. ``analytic`` overrides the tape gradient, which lets a
    test feed a deliberately wrong gradient through the harness.
    """
    if not x.requires_grad:
        raise ValueError("grad_check needs a tensor with requires_grad=True")
    if analytic is None:
        saved = x.grad
        x.grad = None
        backprop(f(x))
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        x.grad = saved

    indices = list(np.ndindex(x.shape)) if x.ndim else [()]
    if max_entries is not None and len(indices) > max_entries:
        rng = rng or SeededRng(0)
        pick = np.sort(rng.permutation(len(indices))[:max_entries])
        indices = [indices[i] for i in pick]

    skipped, worst, worst_idx, n = [], 0.0, None, 0
    flat = x.data
    for idx in indices:
        orig = flat[idx]
        if kink_margin is not None and abs(orig) < kink_margin:
            skipped.append(idx)
            continue
        flat[idx] = orig + h
        fp = _scalar(f(x))
        flat[idx] = orig - h
        fm = _scalar(f(x))
        flat[idx] = orig
        numeric = (fp - fm) / (2.0 * h)
        err = float(relative_error(analytic[idx], numeric))
        n += 1
        if err > worst or worst_idx is None:
            worst, worst_idx = max(err, worst), idx
    return GradCheckReport(worst, n, tol, skipped, worst_idx)
