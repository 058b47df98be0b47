"""SVG chart emitters for run reports and ablation sweeps.

Everything renders through the Agg backend so charts work headless; output
format follows the file extension (use .svg for the vector reports).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import RunReport, attack_success_rate
from .types import ValidationError


def latency_boxplot(reports: list[RunReport], path) -> None:
    """Benign vs attacked per-frame latency distribution, one pair per report."""
    if not reports:
        raise ValidationError("latency_boxplot needs at least one report")
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(reports), 4.0))
    data, labels = [], []
    for r in reports:
        data.append([f.benign_latency * 1e3 for f in r.frames])
        data.append([f.attacked_latency * 1e3 for f in r.frames])
        labels.extend([f"{r.label}\nbenign", f"{r.label}\nattacked"])
    ax.boxplot(data, tick_labels=labels)
    ax.set_yscale("log")
    ax.set_ylabel("pipeline latency [ms]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def asr_curve(reports: list[RunReport], path, thresholds=None) -> None:
    """Attack success rate against the latency threshold, per report."""
    if not reports:
        raise ValidationError("asr_curve needs at least one report")
    all_lat = [f.attacked_latency for r in reports for f in r.frames]
    if thresholds is None:
        hi = max(all_lat)
        thresholds = np.geomspace(max(min(all_lat) / 2, 1e-6), hi * 2, 50)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for r in reports:
        lat = [f.attacked_latency for f in r.frames]
        ax.plot(thresholds, [attack_success_rate(lat, t) for t in thresholds],
                label=r.label)
    ax.set_xscale("log")
    ax.set_xlabel("latency threshold [s]")
    ax.set_ylabel("attack success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def ablation_heatmap(report, path, value: str = "roi_l",
                     confidence_threshold: float | None = None) -> None:
    """Heatmap of one ablation metric over (iou_threshold, max_keep).

    The sweep may cover several confidence thresholds; one slice is drawn,
    defaulting to the first threshold in the grid.
    """
    if not report.rows:
        raise ValidationError("cannot plot an empty ablation report")
    if confidence_threshold is None:
        confidence_threshold = report.rows[0].confidence_threshold
    rows = [r for r in report.rows
            if r.confidence_threshold == confidence_threshold]
    if not rows:
        raise ValidationError(
            f"no rows at confidence threshold {confidence_threshold}")
    ious = sorted({r.iou_threshold for r in rows})
    keeps = sorted({r.max_keep for r in rows})
    grid = np.full((len(ious), len(keeps)), np.nan)
    for r in rows:
        grid[ious.index(r.iou_threshold), keeps.index(r.max_keep)] = \
            getattr(r, value)

    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(keeps),
                                    1.4 + 0.9 * len(ious)))
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xticks(range(len(keeps)), [str(k) for k in keeps])
    ax.set_yticks(range(len(ious)), [f"{v:g}" for v in ious])
    ax.set_xlabel("max_keep")
    ax.set_ylabel("NMS IoU threshold")
    ax.set_title(f"{value} at confidence {confidence_threshold:g}")
    for i in range(len(ious)):
        for j in range(len(keeps)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3g}", ha="center", va="center",
                        color="white", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
