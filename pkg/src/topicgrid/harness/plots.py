"""Loss-curve CSVs and figures for an experiment report.

Heatmaps use one linear color ramp (viridis) from the minimum to the maximum
value over the whole frame set being drawn, so cells are comparable across
panels.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import ConfigError  # noqa: E402

CURVE_HEADER = ("epoch", "train_rle", "val_rle", "test_rle")
HEATMAP_CMAP = "viridis"

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "topicgrid",
}
# no timestamps in the files, so reruns are byte-comparable
_SVG_META = {"Date": None}
_PNG_META = {"Software": None}

ARCH_COLORS = {"mlp": "#7f7f7f", "tdrn": "#1f77b4", "lrcn": "#d62728", "sccn": "#2ca02c"}


def write_curve_csv(path: str | Path, history: Sequence[Mapping[str, float]]) -> Path:
    if not history:
        raise ConfigError("no epochs to write")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in history:
            w.writerow([int(row["epoch"])] + [repr(float(row[c])) for c in CURVE_HEADER[1:]])
    return path


def read_curve_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def plot_model_curves(path: str | Path, arch: str, history: Sequence[Mapping[str, float]]) -> Path:
    if not history:
        raise ConfigError("no epochs to plot")
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        for split, ls in (("train", "-"), ("val", "--"), ("test", ":")):
            ax.plot(epochs, [r[f"{split}_rle"] for r in history], ls, color=ARCH_COLORS.get(arch, "k"), label=split)
        ax.set_xlabel("epoch")
        ax.set_ylabel("RLE")
        ax.set_title(arch.upper())
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_SVG_META)
        plt.close(fig)
    return Path(path)


def plot_rle_panels(path: str | Path, histories: Mapping[str, Sequence[Mapping[str, float]]]) -> Path:
    """Train / validation / test RLE against epoch, one line per architecture."""
    if not histories or any(len(h) == 0 for h in histories.values()):
        raise ConfigError("no epochs to plot")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 2.8), sharey=False)
        for ax, split, title in zip(axes, ("train", "val", "test"), ("training", "validation", "testing")):
            for arch, hist in histories.items():
                ax.plot([r["epoch"] for r in hist], [r[f"{split}_rle"] for r in hist],
                        color=ARCH_COLORS.get(arch), label=arch.upper(), lw=1.2)
            ax.set_title(f"RLE on {title} data")
            ax.set_xlabel("epoch")
        axes[0].set_ylabel("RLE")
        axes[-1].legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_SVG_META)
        plt.close(fig)
    return Path(path)


def frame_heatmap_figure(rows: Sequence[tuple[str, Sequence[tuple[str, np.ndarray]]]]):
    """Grid of k x k heatmaps: one figure row per entity, one panel per labelled frame."""
    if not rows or not rows[0][1]:
        raise ConfigError("no frames to draw")
    all_frames = [f for _, panels in rows for _, f in panels]
    vmin = float(min(f.min() for f in all_frames))
    vmax = float(max(f.max() for f in all_frames))
    if vmax <= vmin:
        vmax = vmin + 1.0
    n_rows, n_cols = len(rows), max(len(p) for _, p in rows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.1 * n_cols + 0.8, 1.2 * n_rows + 0.3), squeeze=False)
        im = None
        for i, (entity, panels) in enumerate(rows):
            for j in range(n_cols):
                ax = axes[i, j]
                ax.set_xticks([])
                ax.set_yticks([])
                if j >= len(panels):
                    ax.axis("off")
                    continue
                label, frame = panels[j]
                im = ax.imshow(frame, cmap=HEATMAP_CMAP, vmin=vmin, vmax=vmax, interpolation="nearest")
                if i == 0:
                    ax.set_title(label, fontsize=7)
            axes[i, 0].set_ylabel(entity, fontsize=7)
        fig.colorbar(im, ax=axes, shrink=0.8, label="topical volume")
    return fig


def plot_frame_heatmaps(
    path: str | Path,
    rows: Sequence[tuple[str, Sequence[tuple[str, np.ndarray]]]],
) -> Path:
    fig = frame_heatmap_figure(rows)
    with plt.rc_context(STYLE):
        fig.savefig(path, dpi=110, metadata=_PNG_META if str(path).endswith(".png") else _SVG_META)
    plt.close(fig)
    return Path(path)


def plot_layout(path: str | Path, points: np.ndarray, cells: np.ndarray, k: int) -> Path:
    """Topic embedding next to the grid it was mapped onto, colored by embedding angle."""
    centered = points - points.mean(0)
    hue = (np.arctan2(centered[:, 1], centered[:, 0]) + np.pi) / (2 * np.pi)
    colors = plt.get_cmap("hsv")(hue)
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(6.0, 2.9))
        a.scatter(points[:, 0], points[:, 1], c=colors, s=14)
        a.set_title("topics after PCA")
        a.set_xlabel("axis 1")
        a.set_ylabel("axis 2")
        img = np.zeros((k, k, 4))
        img[cells[:, 0], cells[:, 1]] = colors
        b.imshow(img, interpolation="nearest")
        b.set_title("split-diffuse grid")
        b.set_xticks([])
        b.set_yticks([])
        fig.tight_layout()
        fig.savefig(path, metadata=_SVG_META)
        plt.close(fig)
    return Path(path)
