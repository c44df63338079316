"""Static SVG figures for training traces and sweep statistics."""
from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed id salt and no timestamp so identical inputs give identical bytes
_RC = {
    "svg.hashsalt": "rkhs-mi",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_trace(path, steps: Sequence[int], raw: Sequence[float], smoothed: Sequence[float],
               true_mi: Sequence[float], title: str = "") -> None:
    """Per-step estimate, its moving average and the true-MI staircase."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, raw, color="tab:blue", alpha=0.25, lw=0.6, label="estimate")
        ax.plot(steps, smoothed, color="tab:blue", lw=1.4, label="smoothed")
        ax.plot(steps, true_mi, color="black", lw=1.0, ls="--", label="true MI")
        ax.set_xlabel("training step")
        ax.set_ylabel("MI (nats)")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_metric(path, series: Dict[str, Tuple[List[float], List[float]]], metric: str, title: str = "") -> None:
    """One line per label; ``series[label] = (true_mi values, metric values)``."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label in sorted(series):
            xs, ys = series[label]
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=label)
        if metric == "bias":
            ax.axhline(0.0, color="black", lw=0.6)
        ax.set_xlabel("true MI (nats)")
        ax.set_ylabel(metric)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)
