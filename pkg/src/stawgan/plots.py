"""Static figures: loss curves and translation sample grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CURVE_TERMS = ("adv_x", "cls_f_x", "rec_x", "rec_r", "ssim", "shape", "cross", "l1", "D_x", "G")


def plot_loss_curves(history, path, terms=CURVE_TERMS) -> Path:
    """``history`` is a list of (step, epoch, {term: value}) rows."""
    path = Path(path)
    fig, axes = plt.subplots(2, 5, figsize=(16, 6), sharex=True)
    for ax, term in zip(axes.flat, terms):
        pts = [(step, vals[term]) for step, _, vals in history if term in vals]
        if pts:
            steps, values = zip(*pts)
            ax.plot(steps, values, lw=0.8)
        ax.set_title(term)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _to_display(img: np.ndarray) -> np.ndarray:
    img = np.clip((np.asarray(img, dtype=np.float64) + 1.0) / 2.0, 0, 1)
    if img.ndim == 3 and img.shape[0] in (1, 3):
        img = img.transpose(1, 2, 0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    return img


def sample_grid(rows, path, titles=("source", "translated", "paired", "target out")) -> Path:
    """One row per sample; each row is a sequence of CHW or HWC arrays in [-1, 1]."""
    path = Path(path)
    rows = list(rows)
    ncols = max(len(r) for r in rows)
    fig, axes = plt.subplots(len(rows), ncols, figsize=(2.2 * ncols, 2.2 * len(rows)), squeeze=False)
    for i, row in enumerate(rows):
        for j in range(ncols):
            ax = axes[i, j]
            ax.axis("off")
            if j < len(row) and row[j] is not None:
                img = _to_display(row[j])
                ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
            if i == 0 and j < len(titles):
                ax.set_title(titles[j], fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
