"""Reverse sampling with per-step x0 predictions and trajectory fusion."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fdiff.attention import fuse_trajectory
from fdiff.config import RunConfig
from fdiff.diffusion import NoiseSchedule, build_linear_schedule, ddim_plan, ddim_step
from fdiff.errors import ShapeMismatch
from fdiff.model import DTYPE, STREAM_SAMPLE, FDiffModel
from fdiff.numerics import ops
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor, no_grad


@dataclass
class SampleResult:
    fused: np.ndarray          # [N, C, D, H, W] probabilities
    mask: np.ndarray           # [N, C, D, H, W] uint8
    steps: list[np.ndarray]    # per-step x0 probabilities, sampling order
    timesteps: tuple[int, ...]


def initial_noise(shape, seed: int, volume_index: int) -> np.ndarray:
    """``x_T`` for one volume; depends only on the run seed and the volume's index."""
    stream = SeededRng(SeededRng.derive_seed(SeededRng.derive_seed(seed, STREAM_SAMPLE), volume_index))
    return stream.normal(shape).astype(DTYPE)


def sample(model: FDiffModel, images: np.ndarray, cfg: RunConfig, sched: NoiseSchedule | None = None,
           indices=None) -> SampleResult:
    """DDIM sampling for a batch of images ``[N, 1, D, H, W]``.

    ``indices`` label each volume for noise seeding (default ``0..N-1``), so a
    volume's result does not depend on which batch it was sampled in.
    """
    c = model.unet_config.mask_channels
    if images.ndim != 5 or images.shape[1] != model.unet_config.image_channels:
        raise ShapeMismatch(f"expected images [N, {model.unet_config.image_channels}, D, H, W], got {images.shape}")
    model.unet_config.check_spatial(images.shape[2:])
    sched = sched or build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    plan = ddim_plan(cfg.T, cfg.ddim_steps, cfg.eta)
    n = images.shape[0]
    indices = range(n) if indices is None else indices
    shape = (c,) + images.shape[2:]
    x = np.stack([initial_noise(shape, cfg.seed, int(i)) for i in indices])
    noise_rng = SeededRng(SeededRng.derive_seed(cfg.seed, STREAM_SAMPLE + 100)) if cfg.eta > 0 else None
    img = Tensor(images.astype(DTYPE))
    model.eval()
    preds = []
    with no_grad():
        for t, t_prev in plan.pairs():
            p = ops.sigmoid(model.predict_logits(Tensor(x), img, t))
            preds.append(p)
            x = ddim_step(x, t, t_prev, p.data, sched, cfg.eta, noise_rng).astype(DTYPE)
        fused = fuse_trajectory(preds, model.fuser).data
    fused = np.clip(fused, 0.0, 1.0)
    return SampleResult(fused, (fused > cfg.threshold).astype(np.uint8), [p.data for p in preds], plan.timesteps)


def to_pgm(slice_2d: np.ndarray) -> bytes:
    """8-bit binary PGM (P5) of values in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(slice_2d, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def dump_slices(volume: np.ndarray, out_dir, prefix: str) -> list:
    """One PGM per axial slice of a ``[D, H, W]`` volume."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for z in range(volume.shape[0]):
        p = out / f"{prefix}_z{z:03d}.pgm"
        p.write_bytes(to_pgm(volume[z]))
        paths.append(p)
    return paths
