"""Train/val/test split manifests."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from fdiff.errors import CorruptFile, InvalidSplit
from fdiff.numerics.rng import SeededRng

SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    """Record paths (relative to the manifest file) with a split tag each."""

    entries: list[tuple[str, str]]
    ratios: tuple[float, float, float]
    seed: int
    root: Path | None = field(default=None, compare=False)

    def paths(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise InvalidSplit(f"unknown split {split!r}")
        return [p for p, s in self.entries if s == split]

    def resolve(self, split: str) -> list[Path]:
        root = self.root or Path(".")
        return [root / p for p in self.paths(split)]

    def counts(self) -> tuple[int, int, int]:
        return tuple(len(self.paths(s)) for s in SPLITS)

    def to_json(self) -> dict:
        return {"seed": self.seed, "ratios": list(self.ratios),
                "records": [{"path": p, "split": s} for p, s in self.entries]}

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
            entries = [(r["path"], r["split"]) for r in data["records"]]
            return cls(entries, tuple(data["ratios"]), int(data["seed"]), root=path.parent)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptFile(f"{path}: malformed manifest ({exc})") from exc


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    """Floor allocation for val and test; train takes the remainder."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 or not math.isfinite(r) for r in ratios):
        raise InvalidSplit(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidSplit(f"ratios must sum to 1, got {sum(ratios)!r}")
    if n < sum(r > 0 for r in ratios):
        raise InvalidSplit(f"{n} records cannot fill {sum(r > 0 for r in ratios)} splits")
    val = math.floor(n * ratios[1] + 1e-9)
    test = math.floor(n * ratios[2] + 1e-9)
    return n - val - test, val, test


def make_manifest(records, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetManifest:
    """Deterministically shuffle ``records`` (paths or ids) into three disjoint splits."""
    records = [str(r) for r in records]
    n_train, n_val, _ = split_counts(len(records), ratios)
    order = SeededRng(seed).permutation(len(records))
    tags = {}
    for rank, idx in enumerate(order):
        tags[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    entries = [(records[i], tags[i]) for i in range(len(records))]
    return DatasetManifest(entries, tuple(float(r) for r in ratios), seed)
