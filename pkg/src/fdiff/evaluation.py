"""Test-split evaluation and report writers.

A report holds one :class:`~fdiff.metrics.MetricReport` per volume. Averages
are plain means of the per-volume rows; HD95 averages skip undefined
entries (exactly one of prediction and ground truth empty), and the number
skipped is reported alongside.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from fdiff.config import RunConfig
from fdiff.data.phantom import VolumeRecord
from fdiff.errors import InvalidSplit
from fdiff.metrics import MetricReport, evaluate_masks
from fdiff.model import FDiffModel
from fdiff.numerics.rng import SeededRng
from fdiff.sampling import sample

SAMPLE_CHUNK = 16
Predictor = Callable[[list[VolumeRecord]], np.ndarray]


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class EvalReport:
    volumes: list[MetricReport]
    label: str = ""

    def __post_init__(self):
        if not self.volumes:
            raise InvalidSplit("nothing to evaluate")

    @property
    def n_classes(self) -> int:
        return len(self.volumes[0].per_class)

    def mean(self, key: str) -> float | None:
        if key == "hd95":
            return _mean_defined(v.hd95 for v in self.volumes)
        return float(np.mean([getattr(v, key) for v in self.volumes]))

    def class_mean(self, key: str, k: int) -> float | None:
        vals = [getattr(v.per_class[k], key) for v in self.volumes]
        return _mean_defined(vals) if key == "hd95" else float(np.mean(vals))

    @property
    def hd95_undefined(self) -> int:
        return sum(v.hd95 is None for v in self.volumes)

    def summary(self) -> dict:
        return {
            "dsc": self.mean("dsc"), "hd95": self.mean("hd95"), "jaccard": self.mean("jaccard"),
            "recall": self.mean("recall"), "hd95_undefined": self.hd95_undefined,
            "per_class": [{"dsc": self.class_mean("dsc", k), "hd95": self.class_mean("hd95", k),
                           "jaccard": self.class_mean("jaccard", k), "recall": self.class_mean("recall", k)}
                          for k in range(self.n_classes)],
        }

    def to_json(self) -> dict:
        return {"label": self.label, "n_volumes": len(self.volumes), "average": self.summary(),
                "volumes": [v.to_json() for v in self.volumes]}

    def table(self) -> str:
        head = ("id", "dsc", "hd95", "jaccard", "recall", "hd95_undef")
        rows = [(v.volume_id, _fmt(v.dsc), _fmt(v.hd95), _fmt(v.jaccard), _fmt(v.recall), str(v.hd95_undefined))
                for v in self.volumes]
        s = self.summary()
        rows.append(("mean", _fmt(s["dsc"]), _fmt(s["hd95"]), _fmt(s["jaccard"]), _fmt(s["recall"]),
                     str(s["hd95_undefined"])))
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "eval") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / f"{stem}.json", "txt": out / f"{stem}.txt", "csv": out / f"{stem}.csv"}
        paths["json"].write_text(json.dumps(self.to_json(), indent=2) + "\n")
        paths["txt"].write_text(self.table())
        with open(paths["csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "class", "dsc", "hd95", "jaccard", "recall"])
            for v in self.volumes:
                for k, c in enumerate(v.per_class):
                    w.writerow([v.volume_id, k, repr(c.dsc), "" if c.hd95 is None else repr(c.hd95),
                                repr(c.jaccard), repr(c.recall)])
        return paths


def _fmt(x: float | None) -> str:
    return "undef" if x is None else f"{x:.4f}"


def evaluate_predictions(records: list[VolumeRecord], masks: np.ndarray, label: str = "") -> EvalReport:
    return EvalReport([evaluate_masks(m, r.label, r.id) for m, r in zip(masks, records)], label)


def evaluate_predictor(records: list[VolumeRecord], predict: Predictor, label: str = "") -> EvalReport:
    return evaluate_predictions(records, predict(records), label)


def oracle_predictor(records: list[VolumeRecord]) -> np.ndarray:
    return np.stack([r.label for r in records])


def random_predictor(q: float = 0.5, seed: int = 0) -> Predictor:
    """Independent Bernoulli(q) voxels; expected DSC against foreground fraction p is 2qp / (q + p)."""
    def predict(records):
        rng = SeededRng(seed)
        return np.stack([(rng.random(r.label.shape) < q).astype(np.uint8) for r in records])
    return predict


def model_predictor(model: FDiffModel, cfg: RunConfig, keep: dict | None = None) -> Predictor:
    """Sample every record in chunks; ``keep`` (if given) receives the fused probability maps."""
    def predict(records):
        masks, probs = [], []
        for s in range(0, len(records), SAMPLE_CHUNK):
            chunk = records[s:s + SAMPLE_CHUNK]
            images = np.stack([r.image for r in chunk])
            res = sample(model, images, cfg, indices=range(s, s + len(chunk)))
            masks.append(res.mask)
            probs.append(res.fused)
        if keep is not None:
            keep["fused"] = np.concatenate(probs)
        return np.concatenate(masks)
    return predict


def evaluate_model(model: FDiffModel, records: list[VolumeRecord], cfg: RunConfig, label: str = "",
                   keep: dict | None = None) -> EvalReport:
    return evaluate_predictor(records, model_predictor(model, cfg, keep), label or cfg.variant)
