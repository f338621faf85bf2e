"""Overlap and surface-distance metrics for binary volumes.

Conventions when masks are empty: both empty gives DSC = Jaccard = 1 and
HD95 = 0; exactly one empty leaves HD95 undefined (``None``). Recall with
an empty ground truth is 1. Distances are in voxel units.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from fdiff.errors import EmptyMask, ShapeMismatch

_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a).astype(bool), np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dsc(pred, gt) -> float:
    a, b = _pair(pred, gt)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def jaccard(pred, gt) -> float:
    a, b = _pair(pred, gt)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def recall(pred, gt) -> float:
    a, b = _pair(pred, gt)
    tp = int((a & b).sum())
    fn = int((~a & b).sum())
    if tp + fn == 0:
        return 1.0
    return tp / (tp + fn)


def boundary(mask) -> np.ndarray:
    """Foreground voxels with at least one background face neighbour.

    Voxels outside the volume count as background.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected a 3-D mask, got shape {m.shape}")
    eroded = ndimage.binary_erosion(m, structure=_FACE_NEIGHBOURS, border_value=0)
    return m & ~eroded


def surface_distances(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Directed nearest-boundary distances ``a -> b`` and ``b -> a``."""
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise EmptyMask("surface distances need two non-empty masks")
    ba, bb = boundary(a), boundary(b)
    return _nearest_distances(ba, bb), _nearest_distances(bb, ba)


def _nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # The EDT supplies the nearest ``dst`` voxel; the distance itself is
    # recomputed from integer offsets so it is exactly sqrt(dx^2 + dy^2 + dz^2).
    idx = ndimage.distance_transform_edt(~dst, return_distances=False, return_indices=True)
    pts = np.argwhere(src)
    nearest = idx[(slice(None),) + tuple(pts.T)].T
    sq = ((pts - nearest) ** 2).sum(axis=1)
    return np.sqrt(sq.astype(np.float64))


def hd95(a, b) -> float | None:
    """95th percentile (linear interpolation) of both directed distance sets pooled."""
    a, b = _pair(a, b)
    ea, eb = not a.any(), not b.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        return None
    d_ab, d_ba = surface_distances(a, b)
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95, method="linear"))


def hausdorff(a, b) -> float | None:
    a, b = _pair(a, b)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return None
    d_ab, d_ba = surface_distances(a, b)
    return float(max(d_ab.max(), d_ba.max()))


@dataclass
class ClassMetrics:
    dsc: float
    hd95: float | None
    jaccard: float
    recall: float

    @property
    def hd95_undefined(self) -> bool:
        return self.hd95 is None


def class_metrics(pred, gt) -> ClassMetrics:
    return ClassMetrics(dsc(pred, gt), hd95(pred, gt), jaccard(pred, gt), recall(pred, gt))


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class MetricReport:
    """Per-class metrics of one volume plus their class averages."""

    per_class: list[ClassMetrics]
    volume_id: str = ""
    dsc: float = field(init=False)
    hd95: float | None = field(init=False)
    jaccard: float = field(init=False)
    recall: float = field(init=False)

    def __post_init__(self):
        self.dsc = float(np.mean([c.dsc for c in self.per_class]))
        self.hd95 = _mean_defined(c.hd95 for c in self.per_class)
        self.jaccard = float(np.mean([c.jaccard for c in self.per_class]))
        self.recall = float(np.mean([c.recall for c in self.per_class]))

    @property
    def hd95_undefined(self) -> int:
        return sum(c.hd95_undefined for c in self.per_class)

    def to_json(self) -> dict:
        return {
            "id": self.volume_id,
            "dsc": self.dsc,
            "hd95": self.hd95,
            "jaccard": self.jaccard,
            "recall": self.recall,
            "hd95_undefined": self.hd95_undefined,
            "per_class": [asdict(c) for c in self.per_class],
        }


def evaluate_masks(pred: np.ndarray, gt: np.ndarray, volume_id: str = "") -> MetricReport:
    """Metrics for channel-first masks ``[C, D, H, W]`` (one class per channel)."""
    pred, gt = _pair(pred, gt)
    if pred.ndim == 3:
        pred, gt = pred[None], gt[None]
    return MetricReport([class_metrics(p, g) for p, g in zip(pred, gt)], volume_id)


def dsc_from_jaccard(j: float) -> float:
    return 2.0 * j / (1.0 + j)

