"""Run configuration: a flat JSON object with documented defaults.

Unknown keys are rejected so typos never silently fall back to a default.
``phantom`` is the only nested object and maps onto
:class:`~fdiff.data.phantom.PhantomConfig`. Named presets ship with the
package (``desk``, ``fullscale``); ``load_config`` accepts either a path or a
preset name.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from fdiff.data.phantom import PhantomConfig
from fdiff.errors import ConfigError, InvalidConfig

VARIANTS = ("basic", "flm", "flm_af", "full")
OPTIMIZERS = ("sgd", "adamw")


@dataclass
class RunConfig:
    # diffusion
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 10
    eta: float = 0.0
    # modules
    M: int = 5
    r: int = 4
    variant: str = "full"
    depth: int = 2
    base_channels: int = 8
    time_embed_dim: int = 16
    # optimisation
    iterations: int = 300
    lr: float = 1e-4
    lr_min: float = 0.0
    optimizer: str = "sgd"
    momentum: float = 0.0
    weight_decay: float = 1e-3
    batch_size: int = 4
    flip_p: float = 0.5
    # data
    n_records: int = 50
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    # run
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"
    threshold: float = 0.5
    dump_slices: bool = False
    log_every: int = 10
    gradcheck_tol: float = 1e-4
    gradcheck_h: float = 1e-6
    ablation_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------
    def validate(self) -> None:
        def need(ok: bool, key: str, msg: str) -> None:
            if not ok:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})", key)

        for key in ("T", "ddim_steps", "M", "r", "depth", "base_channels", "batch_size", "time_embed_dim",
                    "log_every"):
            need(isinstance(getattr(self, key), int) and getattr(self, key) >= 1, key, "must be an integer >= 1")
        for key in ("iterations", "n_records", "seed"):
            need(isinstance(getattr(self, key), int) and getattr(self, key) >= 0, key, "must be an integer >= 0")
        need(self.ddim_steps <= self.T, "ddim_steps", f"must not exceed T={self.T}")
        need(0.0 < self.beta_start <= self.beta_end < 1.0, "beta_end", "need 0 < beta_start <= beta_end < 1")
        need(0.0 <= self.eta <= 1.0, "eta", "must lie in [0, 1]")
        need(self.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
        need(self.optimizer in OPTIMIZERS, "optimizer", f"must be one of {OPTIMIZERS}")
        need(self.lr > 0 and math.isfinite(self.lr), "lr", "must be a positive number")
        need(0.0 <= self.lr_min <= self.lr, "lr_min", "must lie in [0, lr]")
        need(0.0 <= self.momentum < 1.0, "momentum", "must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(0.0 <= self.flip_p <= 1.0, "flip_p", "must lie in [0, 1]")
        need(0.0 < self.threshold < 1.0, "threshold", "must lie in (0, 1)")
        need(self.time_embed_dim % 2 == 0, "time_embed_dim", "must be even")
        need(len(self.ablation_seeds) >= 1, "ablation_seeds", "needs at least one seed")
        need(self.variant in ("basic", "flm") or self.batch_size >= 2, "batch_size",
             "fusion variants need batch_size >= 2 for attention batch statistics")
        need(len(self.split_ratios) == 3 and abs(sum(self.split_ratios) - 1.0) <= 1e-9
             and min(self.split_ratios) >= 0, "split_ratios", "need three non-negative ratios summing to 1")
        try:
            self.phantom.check_depth(self.depth)
        except InvalidConfig as exc:
            raise ConfigError(f"phantom: {exc}", "phantom") from exc

    # -- derived flags ----------------------------------------------------
    @property
    def use_flm(self) -> bool:
        return self.variant != "basic"

    @property
    def fusion(self) -> str | None:
        return {"basic": None, "flm": None, "flm_af": "af", "full": "iaf"}[self.variant]

    def replace(self, **changes) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, PhantomConfig):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        for key in ("n_blobs", "radius"):
            out["phantom"][key] = list(out["phantom"][key])
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_PHANTOM_FIELDS = {f.name for f in dataclasses.fields(PhantomConfig)}
_FLOAT_KEYS = {"beta_start", "beta_end", "eta", "lr", "lr_min", "momentum", "weight_decay", "flip_p", "threshold",
               "gradcheck_tol", "gradcheck_h"}


def from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}", key)
        if key == "phantom":
            if not isinstance(value, dict):
                raise ConfigError("phantom must be an object", key)
            bad = sorted(set(value) - _PHANTOM_FIELDS)
            if bad:
                raise ConfigError(f"unknown phantom key {bad[0]!r}", f"phantom.{bad[0]}")
            try:
                value = PhantomConfig(**value)
            except (InvalidConfig, TypeError, ValueError) as exc:
                raise ConfigError(f"phantom: {exc}", key) from exc
        elif key in ("split_ratios", "ablation_seeds"):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key} must be a list", key)
            value = tuple(value)
        elif key in _FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number", key)
            value = float(value)
        elif key == "dump_slices":
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be true or false", key)
        elif key in ("variant", "optimizer", "data_dir", "out_dir"):
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string", key)
        elif isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer", key)
        kwargs[key] = value
    return RunConfig(**kwargs)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("fdiff.presets").iterdir() if p.name.endswith(".json"))


def _read_text(path: str | os.PathLike) -> str:
    p = Path(path)
    if p.exists():
        return p.read_text()
    if str(path) in preset_names():
        return resources.files("fdiff.presets").joinpath(f"{path}.json").read_text()
    raise FileNotFoundError(f"config {path} not found (presets: {', '.join(preset_names())})")


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse a JSON config file (or preset name); missing keys take defaults."""
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return from_dict(data)
