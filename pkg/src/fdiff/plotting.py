"""Figures written next to the delimited outputs (Agg backend, PNG files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(rows: list[dict], path: str | Path, title: str = "training loss") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if rows:
        it = [r["iteration"] for r in rows]
        for key, style in (("loss", "-"), ("mse", ":"), ("bce", "--"), ("dice", "-.")):
            ax.plot(it, [r[key] for r in rows], style, label=key, linewidth=1.2)
        ax.legend(frameon=False)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_ablation(table: list[dict], path: str | Path) -> Path:
    """Mean DSC and HD95 per variant, one marker per seed behind the mean line."""
    path = Path(path)
    names = [row["variant"] for row in table]
    x = np.arange(len(names))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, label in ((a1, "dsc", "mean DSC"), (a2, "hd95", "mean HD95 (voxels)")):
        means = [row[key] if row[key] is not None else np.nan for row in table]
        ax.plot(x, means, "o-", color="tab:blue", label="mean over seeds")
        for i, row in enumerate(table):
            seeds = [v for v in row.get(f"{key}_per_seed", []) if v is not None]
            ax.scatter([i] * len(seeds), seeds, color="tab:gray", s=12, alpha=0.7)
        ax.set_xticks(x, names)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    a1.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_sample_montage(image: np.ndarray, label: np.ndarray, fused: np.ndarray, path: str | Path,
                        steps: list[np.ndarray] | None = None) -> Path:
    """Mid-axial slices: image, each ground-truth channel, each fused channel, and per-step channel 0."""
    path = Path(path)
    z = image.shape[-3] // 2
    panels = [("image", image[0, z])]
    panels += [(f"label c{k}", label[k, z]) for k in range(label.shape[0])]
    panels += [(f"fused c{k}", fused[k, z]) for k in range(fused.shape[0])]
    for i, p in enumerate(steps or []):
        panels.append((f"step {i} c0", p[0, z]))
    cols = min(len(panels), 6)
    rows = -(-len(panels) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.0 * cols, 2.1 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (name, arr) in zip(axes.flat, panels):
        ax.imshow(arr, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(name, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
