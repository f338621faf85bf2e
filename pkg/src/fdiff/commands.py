"""Command implementations shared by the CLI and the ablation driver.

Each command takes a validated :class:`RunConfig` plus paths and writes its
artefacts into an output directory. The ablation driver calls
:func:`cmd_train` and :func:`cmd_eval` unchanged, so an ablation run is
byte-identical to the equivalent pair of standalone commands.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from fdiff.checkpoint import load_state
from fdiff.config import RunConfig
from fdiff.data.dataset import gen_dataset, load_split
from fdiff.data.phantom import VolumeRecord
from fdiff.data.volume_io import read_volume, write_volume
from fdiff.errors import ConfigError, ShapeMismatch
from fdiff.evaluation import EvalReport, evaluate_model
from fdiff.gradsuite import GradSuiteReport, run_suite
from fdiff.model import FDiffModel, build_model
from fdiff.plotting import plot_loss_curve, plot_sample_montage
from fdiff.sampling import SampleResult, dump_slices, sample
from fdiff.training import TrainResult, train

log = logging.getLogger(__name__)


def load_model(cfg: RunConfig, checkpoint: str | Path) -> FDiffModel:
    model = build_model(cfg)
    state = load_state(checkpoint)
    try:
        model.load_state_dict(state)
    except (KeyError, ShapeMismatch) as exc:
        raise ConfigError(f"checkpoint {checkpoint} does not fit variant {cfg.variant!r}: {exc}", "variant") from exc
    return model.eval()


def cmd_gen_data(cfg: RunConfig, out_dir: str | Path | None = None):
    out = Path(out_dir or cfg.data_dir)
    manifest = gen_dataset(out, cfg.n_records, cfg.phantom, cfg.split_ratios, cfg.phantom.seed)
    log.info("wrote %d phantoms to %s (train/val/test = %s)", cfg.n_records, out, manifest.counts())
    return manifest


def cmd_train(cfg: RunConfig, out_dir: str | Path) -> TrainResult:
    out = Path(out_dir)
    result = train(cfg, load_split(cfg.data_dir, "train"), out)
    plot_loss_curve(result.rows, out / "loss.png", title=f"{cfg.variant} (seed {cfg.seed})")
    return result


def cmd_sample(cfg: RunConfig, checkpoint: str | Path, volume: str | Path, out_dir: str | Path) -> SampleResult:
    """Sample one volume; writes ``fused.fdfv`` (probabilities as image, mask as label) and ``steps.npz``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(cfg, checkpoint)
    record = read_volume(volume)
    if record.image.shape[0] != model.unet_config.image_channels:
        raise ShapeMismatch(f"volume has {record.image.shape[0]} image channels, model expects "
                            f"{model.unet_config.image_channels}")
    res = sample(model, record.image[None], cfg)
    fused, mask = res.fused[0], res.mask[0]
    write_volume(VolumeRecord(fused.astype(np.float32), mask, id=record.id, seed=cfg.seed), out / "fused.fdfv")
    np.savez(out / "steps.npz", timesteps=np.array(res.timesteps), steps=np.stack([s[0] for s in res.steps]))
    if cfg.dump_slices:
        for k in range(fused.shape[0]):
            dump_slices(fused[k], out / "slices", f"fused_c{k}")
            dump_slices(mask[k].astype(np.float32), out / "slices", f"mask_c{k}")
        dump_slices(record.image[0], out / "slices", "image")
    plot_sample_montage(record.image, record.label, fused, out / "montage.png",
                        steps=[s[0] for s in res.steps])
    return res


def cmd_eval(cfg: RunConfig, checkpoint: str | Path, split: str, out_dir: str | Path) -> EvalReport:
    model = load_model(cfg, checkpoint)
    records = load_split(cfg.data_dir, split)
    keep: dict = {}
    report = evaluate_model(model, records, cfg, label=cfg.variant, keep=keep)
    out = Path(out_dir)
    report.write(out, stem=f"eval_{split}")
    if records:
        plot_sample_montage(records[0].image, records[0].label, keep["fused"][0], out / f"eval_{split}_montage.png")
    log.info("%s on %s: DSC %.4f HD95 %s", cfg.variant, split, report.mean("dsc"), report.mean("hd95"))
    return report


def cmd_gradcheck(cfg: RunConfig, out_dir: str | Path | None = None) -> GradSuiteReport:
    report = run_suite(h=cfg.gradcheck_h, tol=cfg.gradcheck_tol, seed=cfg.seed)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(report.table())
        (out / "gradcheck.json").write_text(report.to_json() + "\n")
    return report


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")
