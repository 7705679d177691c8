"""Delimited outputs and the figures rendered alongside them.

Every report artifact comes in pairs: a small CSV (or key-value file) that
scripts can diff, and a PNG of the same numbers for humans.  Matplotlib runs
on the Agg backend so this works headless.
"""

from __future__ import annotations

import pathlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "write_csv",
    "write_key_values",
    "loss_curve_figure",
    "metric_bar_figure",
    "quantization_figure",
    "heatmap_grid_figure",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv(path, header, rows) -> pathlib.Path:
    path = pathlib.Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_key_values(path, mapping) -> pathlib.Path:
    return write_csv(path, ("key", "value"),
                     [(k, v) for k, v in mapping.items()])


def loss_curve_figure(loss_rows, path) -> pathlib.Path:
    """Loss vs step on a log axis, with learning-rate drops marked."""
    path = pathlib.Path(path)
    steps = [r[0] for r in loss_rows]
    losses = [r[3] for r in loss_rows]
    lrs = [r[2] for r in loss_rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("weighted MSE")
    ax.set_title("training loss")
    for i in range(1, len(lrs)):
        if lrs[i] != lrs[i - 1]:
            ax.axvline(steps[i], color="gray", ls="--", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def metric_bar_figure(metrics: dict, path) -> pathlib.Path:
    path = pathlib.Path(path)
    names = list(metrics)
    values = [metrics[n] for n in names]
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    bars = ax.bar(names, values, color="#4878d0")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("keypoint metrics")
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 0.02, f"{v:.3f}",
                ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def quantization_figure(rows, path) -> pathlib.Path:
    """Mean decode error vs stride, one line per decode/flip combination.

    ``rows`` are QuantizationRow-like: stride, decode, flip, mean/max px
    error, mean OKS.
    """
    path = pathlib.Path(path)
    combos = sorted({(r.decode, r.flip) for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for decode, flip in combos:
        pts = sorted((r.stride, r.mean_px_error) for r in rows
                     if r.decode == decode and r.flip == flip)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"{decode}, flip={flip}")
    ax.set_xlabel("heatmap stride")
    ax.set_ylabel("mean decode error (px)")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_title("quantization error vs stride")
    ax.grid(True, which="both", lw=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def heatmap_grid_figure(maps: np.ndarray, path, joint_names=None,
                        max_panels: int = 16) -> pathlib.Path:
    """Tile per-joint heatmaps (K, H, W) into one overview image."""
    path = pathlib.Path(path)
    count = min(len(maps), max_panels)
    cols = int(np.ceil(np.sqrt(count)))
    rows_n = int(np.ceil(count / cols))
    fig, axes = plt.subplots(rows_n, cols, figsize=(2.2 * cols, 2.2 * rows_n),
                             squeeze=False)
    for k in range(rows_n * cols):
        ax = axes[k // cols][k % cols]
        ax.axis("off")
        if k < count:
            ax.imshow(maps[k], cmap="magma", interpolation="nearest")
            if joint_names is not None and k < len(joint_names):
                ax.set_title(joint_names[k], fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
