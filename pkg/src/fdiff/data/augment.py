"""Flip augmentation applied jointly to image and label."""
from __future__ import annotations

import numpy as np

from fdiff.data.phantom import VolumeRecord
from fdiff.numerics.rng import SeededRng


def augment_flip(record: VolumeRecord, axes=(0, 1, 2), rng: SeededRng | None = None, p: float = 0.5) -> VolumeRecord:
    """Flip along each spatial axis independently with probability ``p``.

    Axes index the spatial dims ``(D, H, W)``; axis ``a`` is array axis
    ``a + 1``. One uniform draw is consumed per listed axis.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rng = rng or SeededRng(record.seed)
    chosen = tuple(a + 1 for a in axes if rng.random() < p)
    if not chosen:
        return record
    return VolumeRecord(np.flip(record.image, chosen).copy(), np.flip(record.label, chosen).copy(),
                        id=record.id, seed=record.seed, meta=record.meta)
