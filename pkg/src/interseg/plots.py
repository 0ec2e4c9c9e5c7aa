"""Dice-vs-interaction figure emitter (PNG or SVG by file suffix)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import DiceCurve


def plot_dice_curves(curves: dict[str, DiceCurve], out_path, *,
                     title: str = "Dice per interaction",
                     class_ids=None):
    """One line per (label, class): editing quality against interaction
    count.  ``class_ids=None`` plots the mean over foreground classes."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, curve in curves.items():
        if class_ids is None:
            ys = [curve.mean_over(i) for i in curve.iterations]
            ax.plot(curve.iterations, ys, marker="o", markersize=3, label=label)
        else:
            for c in class_ids:
                ys = [curve.at(i, c) for i in curve.iterations]
                ax.plot(curve.iterations, ys, marker="o", markersize=3,
                        label=f"{label} (class {c})")
    ax.set_xlabel("interaction")
    ax.set_ylabel("Dice")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
