"""Generate a phantom dataset on disk and load its splits."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from fdiff.data.manifest import DatasetManifest, make_manifest
from fdiff.data.phantom import PhantomConfig, VolumeRecord, gen_phantom
from fdiff.data.volume_io import read_volume, write_volume
from fdiff.numerics.rng import SeededRng

MANIFEST_NAME = "manifest.json"


def gen_dataset(out_dir: str | os.PathLike, n_records: int, phantom: PhantomConfig,
                ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetManifest:
    """Write ``n_records`` phantoms plus a manifest; record ``i`` uses seed ``derive_seed(seed, i)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(n_records):
        rid = f"vol_{i:04d}"
        rec = gen_phantom(phantom, SeededRng(SeededRng.derive_seed(seed, i)), record_id=rid)
        write_volume(rec, out / f"{rid}.fdfv")
        names.append(f"{rid}.fdfv")
    manifest = make_manifest(names, ratios, seed)
    manifest.root = out
    manifest.save(out / MANIFEST_NAME)
    return manifest


def load_split(data_dir: str | os.PathLike, split: str) -> list[VolumeRecord]:
    manifest = DatasetManifest.load(Path(data_dir) / MANIFEST_NAME)
    return [read_volume(p) for p in manifest.resolve(split)]


def stack_records(records: list[VolumeRecord], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([r.image for r in records]).astype(dtype)
    labels = np.stack([r.label for r in records]).astype(dtype)
    return images, labels
