"""Training loop.

Every iteration draws a batch of training records, flips them, and noises
each label at two timesteps ``t_hi >= t_lo`` drawn uniformly from
``1..T``. All ``2B`` noisy inputs pass through the denoiser as one batch and
the combined loss is applied to every x0 prediction. Fusion variants add a
second loss term on ``fuse(p(t_hi), p(t_lo))``, mirroring the order in which
the sampler visits timesteps, so the fusion module learns to merge an early
estimate with a later one. Non-fusion variants consume the same random
draws, so runs with a shared seed differ only by the active modules.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fdiff.checkpoint import save_checkpoint, save_state
from fdiff.config import RunConfig
from fdiff.data.augment import augment_flip
from fdiff.data.dataset import load_split, stack_records
from fdiff.data.phantom import VolumeRecord
from fdiff.diffusion import build_linear_schedule, q_sample
from fdiff.errors import InvalidSplit, NumericalFailure
from fdiff.fuzzy import flm_param_grads
from fdiff.losses import loss_from_probs
from fdiff.model import DTYPE, STREAM_TRAIN, FDiffModel, build_model
from fdiff.numerics import ops
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor, backprop
from fdiff.optim import SGD, AdamW, cosine_lr

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "mse", "bce", "dice")
CHECKPOINT_NAME = "checkpoint.fdfw"
LAST_GOOD_NAME = "last_good.fdfw"


@dataclass
class TrainResult:
    model: FDiffModel
    rows: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    checkpoint: Path | None = None


def make_optimizer(model: FDiffModel, cfg: RunConfig):
    params = model.parameters()
    if cfg.optimizer == "adamw":
        return AdamW(params, weight_decay=cfg.weight_decay)
    return SGD(params, momentum=cfg.momentum)


def _batch(records: list[VolumeRecord], idx: np.ndarray, rng: SeededRng, flip_p: float):
    chosen = [augment_flip(records[i], rng=rng, p=flip_p) for i in idx]
    return stack_records(chosen, DTYPE)


def train_step(model: FDiffModel, images: np.ndarray, labels: np.ndarray, t_hi: np.ndarray, t_lo: np.ndarray,
               eps: np.ndarray, sched) -> tuple[Tensor, dict]:
    """Loss of one batch; ``eps`` holds the noise for the ``t_hi`` half then the ``t_lo`` half."""
    b = images.shape[0]
    t = np.concatenate([t_hi, t_lo])
    x0 = np.concatenate([labels, labels])
    x_t = q_sample(x0, t, eps, sched).astype(DTYPE)
    probs = ops.sigmoid(model.predict_logits(Tensor(x_t), Tensor(np.concatenate([images, images])), t))
    terms = loss_from_probs(probs, x0)
    total = terms.total
    row = {"mse": terms.mse, "bce": terms.bce, "dice": terms.dice}
    if model.fusion is not None:
        fused = model.fuse(ops.getitem(probs, slice(0, b)), ops.getitem(probs, slice(b, 2 * b)))
        extra = loss_from_probs(fused, labels)
        total = ops.add(total, extra.total)
        for key in ("mse", "bce", "dice"):
            row[key] += getattr(extra, key)
    row["loss"] = float(total.item())
    return total, row


def train(cfg: RunConfig, records: list[VolumeRecord], out_dir: str | Path | None = None,
          model: FDiffModel | None = None) -> TrainResult:
    """Train ``cfg.iterations`` steps; writes the checkpoint and loss log when ``out_dir`` is given."""
    if not records:
        raise InvalidSplit("training split is empty")
    model = model or build_model(cfg)
    model.train()
    sched = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    rng = SeededRng(SeededRng.derive_seed(cfg.seed, STREAM_TRAIN))
    opt = make_optimizer(model, cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    b = min(cfg.batch_size, len(records))
    result = TrainResult(model)
    start = time.perf_counter()
    for it in range(cfg.iterations):
        good = model.state_dict()
        idx = rng.permutation(len(records))[:b]
        images, labels = _batch(records, idx, rng, cfg.flip_p)
        ts = np.sort(rng.integers(1, cfg.T + 1, size=(2, b)), axis=0)
        t_lo, t_hi = ts[0], ts[1]
        eps = rng.normal((2 * b,) + labels.shape[1:])
        try:
            model.zero_grad()
            loss, row = train_step(model, images, labels, t_hi, t_lo, eps, sched)
            backprop(loss)
            for fl in model.fuzzy_layers():
                fl.sigma.grad = flm_param_grads(fl)["sigma"]
            opt.step(cosine_lr(it, cfg.iterations, cfg.lr, cfg.lr_min))
            for fl in model.fuzzy_layers():
                fl.clamp_()
            if not all(np.isfinite(p.data).all() for p in model.parameters()):
                raise NumericalFailure(f"parameters became non-finite at iteration {it}")
        except NumericalFailure:
            model.load_state_dict(good)
            if out is not None:
                save_state(good, out / LAST_GOOD_NAME)
                _write_log(result.rows, out / "loss.csv")
            log.error("training diverged at iteration %d; last good weights kept", it)
            raise
        row = {"iteration": it, **row}
        result.rows.append(row)
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            log.info("iter %d loss %.4f (mse %.4f bce %.4f dice %.4f)",
                     it, row["loss"], row["mse"], row["bce"], row["dice"])
    result.seconds = time.perf_counter() - start
    if out is not None:
        result.checkpoint = out / CHECKPOINT_NAME
        save_checkpoint(model, result.checkpoint)
        _write_log(result.rows, out / "loss.csv")
        (out / "train_summary.json").write_text(json.dumps(
            {"iterations": cfg.iterations, "variant": cfg.variant, "seed": cfg.seed,
             "parameters": model.num_parameters(),
             "final_loss": result.rows[-1]["loss"] if result.rows else None}, indent=2) + "\n")
    model.eval()
    return result


def _write_log(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([row["iteration"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train_from_dir(cfg: RunConfig, out_dir: str | Path | None = None) -> TrainResult:
    return train(cfg, load_split(cfg.data_dir, "train"), out_dir)
