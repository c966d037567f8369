"""Matplotlib figures written next to the JSON/CSV reports."""

from __future__ import annotations

import math
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mesa.backbone import LAYER_SPECS  # noqa: E402

_STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.dpi": 120,
}


def plot_width_distribution(path, dist, weighting, widths: Sequence[float] | None = None) -> None:
    """Histogram of letter widths with the fitted PDF and the layer interval boundaries."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        hi = None
        if widths is not None and len(widths):
            widths = np.asarray(widths)
            ax.hist(widths, bins=min(40, max(8, len(widths) // 5)), density=True, alpha=0.5, color="0.55",
                    label=f"letter widths (n={len(widths)})")
            hi = float(widths.max()) * 1.15
        if dist is not None:
            if hi is None:
                hi = dist.mu + 4 * dist.sigma
            grid = np.linspace(max(1e-6, 0.0), hi, 400)
            ax.plot(grid, dist.pdf(grid), color="C0", lw=1.8, label=f"{dist.family} fit (KS={dist.fit_score:.3f})")
            ax.axvline(dist.mu, color="C3", ls="--", lw=1, label=f"mu={dist.mu:.1f}, sigma={dist.sigma:.1f}")
        if hi is not None:
            for name, (a, b) in zip(weighting.layers, weighting.intervals):
                if math.isfinite(b) and b < hi:
                    ax.axvline(b, color="0.3", ls=":", lw=0.8)
                    ax.text(b, ax.get_ylim()[1] * 0.95, name, rotation=90, va="top", ha="right", fontsize=7)
        ax.set_xlabel("letter width (px)")
        ax.set_ylabel("density")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_loss_trace(path, losses: Sequence[float], initial: float | None = None) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ys = ([initial] if initial is not None else []) + list(losses)
        xs = np.arange(len(ys)) if initial is not None else np.arange(1, len(ys) + 1)
        if ys and min(ys) > 0:
            ax.semilogy(xs, ys, color="C0")
        else:
            ax.plot(xs, ys, color="C0")
        ax.set_xlabel("L-BFGS iteration")
        ax.set_ylabel("total style loss")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_metric_bars(path, metric: str, labels: Sequence[str], values: Sequence[float], average: float | None = None) -> None:
    """One bar per evaluated pair plus the average, in the manner of per-dataset summary charts."""
    vals = [v if math.isfinite(v) else np.nan for v in values]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(vals) + 2), 3.2))
        pos = np.arange(len(vals))
        ax.bar(pos, vals, color="C0", alpha=0.8)
        if average is not None and math.isfinite(average):
            ax.axhline(average, color="C3", ls="--", lw=1, label=f"average {average:.4g}")
            ax.legend(frameon=False, fontsize=7)
        ax.set_xticks(pos)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel(metric)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_layer_weights(path, weighting) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        names = list(weighting.layers)
        ax.bar(names, weighting.normalized, color=[f"C{i}" for i in range(len(names))])
        ax.set_ylabel("normalized weight")
        ax.set_title(f"{weighting.scheme}; RF " + "/".join(str(LAYER_SPECS[n].receptive_field) for n in names), fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
