"""Finite-difference gradient suites for every trainable component.

Each check builds a small float64 instance, reduces its output to a scalar
through a fixed random projection (a plain sum would hide errors behind
batch-norm's invariance to shifts), and compares tape gradients with
central differences for each parameter group and for the inputs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from fdiff.attention import AttentionFusion, IterativeAttentionFusion, MsCam
from fdiff.denoiser import Denoiser, UNetConfig
from fdiff.fuzzy import FuzzyLayer
from fdiff.losses import total_loss
from fdiff.numerics import ops
from fdiff.numerics.gradcheck import grad_check
from fdiff.numerics.nn import Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


@dataclass
class GradRow:
    group: str
    name: str
    max_rel_err: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


@dataclass
class GradSuiteReport:
    rows: list[GradRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[GradRow]:
        return [r for r in self.rows if not r.passed]

    def groups(self) -> list[str]:
        return sorted({r.group for r in self.rows})

    def table(self) -> str:
        lines = [f"{'group':<10} {'tensor':<42} {'max_rel_err':>12} {'n':>5}  status"]
        for r in self.rows:
            lines.append(f"{r.group:<10} {r.name:<42} {r.max_rel_err:12.3e} {r.n_checked:5d}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} ({len(self.failures())} failing)")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed,
                           "rows": [{**asdict(r), "passed": r.passed} for r in self.rows]}, indent=2)


def _projector(shape, rng: SeededRng) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.normal(shape))
    return lambda y: ops.sum(ops.mul(y, w))


def _check_tensors(group: str, objective: Callable[[], Tensor], tensors: dict[str, Tensor], h: float, tol: float,
                   max_entries: int | None, rng: SeededRng) -> list[GradRow]:
    rows = []
    for name, t in tensors.items():
        rep = grad_check(lambda _: objective(), t, h=h, tol=tol, max_entries=max_entries, rng=rng)
        rows.append(GradRow(group, name, rep.max_rel_err, rep.n_checked, tol))
    return rows


def _with_input(module: Module, inputs: dict[str, Tensor]) -> dict[str, Tensor]:
    return {**inputs, **dict(module.named_parameters())}


def check_flm(h: float, tol: float, seed: int = 0, max_entries: int | None = 64) -> list[GradRow]:
    rng = SeededRng(seed)
    layer = FuzzyLayer(3, M=5, rng=rng)
    layer.sigma.data = rng.uniform(0.7, 1.5, size=layer.sigma.shape)
    f = Tensor(rng.normal((2, 3, 4, 4, 4)), requires_grad=True)
    proj = _projector(f.shape, rng)
    return _check_tensors("flm", lambda: proj(layer(f)), _with_input(layer, {"input": f}), h, tol, max_entries, rng)


def check_mscam(h: float, tol: float, seed: int = 0, max_entries: int | None = 64) -> list[GradRow]:
    rng = SeededRng(seed)
    cam = MsCam(8, r=4, rng=rng)
    x = Tensor(rng.normal((2, 8, 3, 3, 3)), requires_grad=True)
    proj = _projector(x.shape, rng)
    return _check_tensors("mscam", lambda: proj(cam(x)), _with_input(cam, {"input": x}), h, tol, max_entries, rng)


def _check_fusion(group: str, module: Module, h: float, tol: float, rng: SeededRng,
                  max_entries: int | None) -> list[GradRow]:
    x = Tensor(rng.normal((2, 4, 3, 3, 3)), requires_grad=True)
    y = Tensor(rng.normal((2, 4, 3, 3, 3)), requires_grad=True)
    proj = _projector(x.shape, rng)
    return _check_tensors(group, lambda: proj(module(x, y)), _with_input(module, {"X": x, "Y": y}),
                          h, tol, max_entries, rng)


def check_af(h: float, tol: float, seed: int = 0, max_entries: int | None = 64) -> list[GradRow]:
    rng = SeededRng(seed)
    return _check_fusion("af", AttentionFusion(4, r=2, rng=rng), h, tol, rng, max_entries)


def check_iaf(h: float, tol: float, seed: int = 0, max_entries: int | None = 64) -> list[GradRow]:
    rng = SeededRng(seed)
    return _check_fusion("iaf", IterativeAttentionFusion(4, r=2, rng=rng), h, tol, rng, max_entries)


def check_loss(h: float, tol: float, seed: int = 0, max_entries: int | None = None) -> list[GradRow]:
    rng = SeededRng(seed)
    logits = Tensor(rng.normal((2, 2, 3, 3, 3)) * 2.0, requires_grad=True)
    labels = (rng.random(logits.shape) < 0.4).astype(np.float64)
    return _check_tensors("loss", lambda: total_loss(logits, labels).total, {"logits": logits},
                          h, tol, max_entries, rng)


def check_denoiser(h: float, tol: float, seed: int = 0, max_entries: int | None = 12,
                   spatial: int = 8) -> list[GradRow]:
    """A random slice of every parameter tensor of a depth-2, base-4 denoiser, plus ``x_t``."""
    rng = SeededRng(seed)
    net = Denoiser(UNetConfig(mask_channels=2, depth=2, base_channels=4, time_embed_dim=8, M=3), rng)
    x_t = Tensor(rng.normal((1, 2, spatial, spatial, spatial)), requires_grad=True)
    image = Tensor(rng.random((1, 1, spatial, spatial, spatial)))
    proj = _projector(x_t.shape, rng)
    return _check_tensors("denoiser", lambda: proj(net(x_t, image, 37)), _with_input(net, {"x_t": x_t}),
                          h, tol, max_entries, rng)


SUITES: dict[str, Callable[..., list[GradRow]]] = {
    "flm": check_flm, "mscam": check_mscam, "af": check_af, "iaf": check_iaf,
    "loss": check_loss, "denoiser": check_denoiser,
}


def run_suite(h: float = 1e-6, tol: float = 1e-4, seed: int = 0, groups=None) -> GradSuiteReport:
    rows = []
    for name in groups or SUITES:
        rows += SUITES[name](h, tol, seed)
    return GradSuiteReport(rows)
