"""Figure rendering for the report paths (evaluate / histogram commands).

Figures are written next to the tab-separated output they visualize.
"""
from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import ChannelHistograms  # noqa: E402

CHANNEL_NAMES = ("red", "green", "blue")
CHANNEL_COLORS = ("tab:red", "tab:green", "tab:blue")


def channel_density_figure(path, hists: Dict[str, ChannelHistograms],
                           title: Optional[str] = None) -> None:
    """One panel per channel; one density curve per labelled image set,
    with vertical dashed mean and dotted median markers."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2), sharey=False)
    styles = ["-", "--", "-."]
    for ci, ax in enumerate(axes):
        for si, (label, h) in enumerate(hists.items()):
            style = styles[si % len(styles)]
            ax.plot(h.bin_centers, h.densities[ci], style,
                    color=CHANNEL_COLORS[ci], alpha=0.55 + 0.45 * (si == 0),
                    label=label)
            ax.axvline(h.means[ci], color=CHANNEL_COLORS[ci], linestyle="--",
                       linewidth=0.8, alpha=0.6)
            ax.axvline(h.medians[ci], color=CHANNEL_COLORS[ci], linestyle=":",
                       linewidth=0.8, alpha=0.6)
        ax.set_xlabel("intensity")
        ax.set_title(CHANNEL_NAMES[ci])
        ax.set_xlim(0.0, 1.0)
    axes[0].set_ylabel("density")
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def per_class_accuracy_figure(path, class_names: Sequence[str],
                              accuracies: Sequence[float],
                              overall: float) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(class_names)), 3.0))
    ax.bar(range(len(class_names)), accuracies, color="tab:blue")
    ax.axhline(overall, color="k", linestyle="--", linewidth=1.0,
               label=f"overall {overall:.3f}")
    ax.set_xticks(range(len(class_names)))
    ax.set_xticklabels(class_names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("recall")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sample_grid_figure(path, real_by_class, generated_by_class,
                       class_names: Sequence[str], per_class: int = 6) -> None:
    """Two rows per class: real examples above generated ones."""
    n_classes = len(class_names)
    fig, axes = plt.subplots(2 * n_classes, per_class,
                             figsize=(1.1 * per_class, 2.3 * n_classes))
    axes = axes.reshape(2 * n_classes, per_class)
    for ci in range(n_classes):
        for row, source in ((0, real_by_class), (1, generated_by_class)):
            imgs = source[ci]
            for j in range(per_class):
                ax = axes[2 * ci + row][j]
                ax.set_xticks([])
                ax.set_yticks([])
                if j < len(imgs):
                    ax.imshow(np.clip((imgs[j] + 1.0) / 2.0, 0, 1),
                              interpolation="nearest")
                if j == 0:
                    tag = "real" if row == 0 else "generated"
                    ax.set_ylabel(f"{class_names[ci]}\n{tag}", fontsize=6)
    fig.tight_layout(pad=0.3)
    fig.savefig(path, dpi=130)
    plt.close(fig)


def training_curve_figure(path, steps, losses, window: int = 100) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    ax.plot(steps, losses, linewidth=0.6, alpha=0.5, label="loss")
    if len(losses) >= window:
        import numpy as np
        kernel = np.ones(window) / window
        smooth = np.convolve(losses, kernel, mode="valid")
        ax.plot(steps[window - 1:], smooth, linewidth=1.4,
                label=f"{window}-step mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
