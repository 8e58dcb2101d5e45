"""Figures written next to the TSV reports (PNG, Agg backend)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "image.cmap": "gray",
}
# no timestamps or version strings in the files, so reruns give equal bytes
_PNG_META = {"Software": None}


def _golden(width):
    return width, width * (math.sqrt(5) - 1) / 2


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_training(logs, path):
    """Objective and EER curves.

    ``logs`` maps a run name ("f", "stage 1", ...) to its list of epoch
    records. The f run gets objective and train/validation EER panels; the
    remaining runs share a third panel of objectives.
    """
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        f_log = logs.get("f")
        if f_log:
            ep = [r["epoch"] for r in f_log]
            axes[0].plot(ep, [r["objective"] for r in f_log], color="k", lw=1)
            axes[0].set_title("f objective")
            axes[1].plot(ep, [r["train_eer"] for r in f_log], label="training", lw=1)
            axes[1].plot(ep, [r["val_eer"] for r in f_log], label="validation", lw=1, ls="--")
            axes[1].set_title("f EER (%)")
            axes[1].legend(frameon=False)
        for name, log in logs.items():
            if name == "f" or not log:
                continue
            axes[2].plot([r["epoch"] for r in log], [r["objective"] for r in log], lw=1,
                         label=name)
        axes[2].set_title("g objectives")
        if len(logs) > 1:
            axes[2].legend(frameon=False)
        for ax in axes:
            ax.set_xlabel("epoch")
        _logy(axes[0])
        _logy(axes[2])
        fig.tight_layout()
        _save(fig, path)


def _logy(ax):
    vals = [y for line in ax.get_lines() for y in line.get_ydata() if y > 0]
    if vals:
        ax.set_yscale("log")


def plot_stage_report(rows, path):
    """Per-stage cost (log scale) next to DR/FA/EER of each stage alone."""
    stages = [r["stage"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax_cost, ax_err) = plt.subplots(1, 2, figsize=_golden(9))
        ax_cost.bar(stages, [max(r["stage_cost"], 1) for r in rows], color="0.45")
        ax_cost.set_yscale("log")
        ax_cost.set_xlabel("stage")
        ax_cost.set_ylabel("MACs per pattern")
        for key, style in (("DR", "-o"), ("FA", "-s"), ("EER", "-d")):
            ax_err.plot(stages, [r[key] for r in rows], style, ms=3, lw=1, label=key)
        ax_err.set_xlabel("stage")
        ax_err.set_ylabel("%")
        ax_err.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_stage_map(stages_consumed, num_stages, grid, path):
    rows, cols = grid
    img = np.asarray(stages_consumed).reshape(rows, cols)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_golden(6))
        im = ax.imshow(img, cmap="gray_r", vmin=1, vmax=max(num_stages, 2),
                       interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        cb = fig.colorbar(im, ax=ax, ticks=range(1, num_stages + 1))
        cb.set_label("stages used")
        fig.tight_layout()
        _save(fig, path)
