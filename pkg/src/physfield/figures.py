"""Matplotlib figure rendering for the report paths (metrics summary and
point cloud previews). Import is deferred to call time and the Agg backend
is forced so headless runs never touch a display.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import MetricsReport

_PNG_METADATA = {"Software": "physfield"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_metrics_figure(report: MetricsReport, path: str | Path) -> None:
    """Two panels: prediction-vs-truth scatter and the metric means."""
    plt = _pyplot()
    fig, (ax_scatter, ax_bars) = plt.subplots(1, 2, figsize=(9, 4))

    gts = np.asarray(report.gts)
    preds = np.asarray(report.preds)
    lo = min(gts.min(), preds.min()) * 0.8
    hi = max(gts.max(), preds.max()) * 1.25
    ax_scatter.plot([lo, hi], [lo, hi], "k--", linewidth=0.8, label="ideal")
    ax_scatter.scatter(gts, preds, s=18, color="#3465a4", zorder=3)
    ax_scatter.set_xscale("log")
    ax_scatter.set_yscale("log")
    ax_scatter.set_xlabel("ground truth")
    ax_scatter.set_ylabel("prediction")
    ax_scatter.set_title(f"{report.n} instances")
    ax_scatter.legend(loc="upper left", fontsize=8)

    labels = ["ADE", "ALDE", "APE", "MnRE"]
    means = [report.mean_ade, report.mean_alde, report.mean_ape, report.mean_mnre]
    if report.pra is not None:
        labels.append("PRA")
        means.append(report.pra)
    ax_bars.bar(labels, means, color="#73d216")
    for x, m in enumerate(means):
        ax_bars.text(x, m, f"{m:.3f}", ha="center", va="bottom", fontsize=8)
    ax_bars.set_title("means")

    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def render_cloud_preview(points: np.ndarray, colors: np.ndarray,
                         path: str | Path, title: str = "") -> None:
    """3D scatter preview of an exported cloud; colors are uint8 RGB."""
    plt = _pyplot()
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    pts = np.asarray(points)
    step = max(1, pts.shape[0] // 20000)
    sub = slice(None, None, step)
    ax.scatter(pts[sub, 0], pts[sub, 1], pts[sub, 2],
               c=np.asarray(colors[sub], dtype=np.float64) / 255.0, s=2)
    if title:
        ax.set_title(title)
    span = pts.max(axis=0) - pts.min(axis=0)
    center = (pts.max(axis=0) + pts.min(axis=0)) / 2.0
    radius = max(span.max() / 2.0, 1e-6)
    ax.set_xlim(center[0] - radius, center[0] + radius)
    ax.set_ylim(center[1] - radius, center[1] + radius)
    ax.set_zlim(center[2] - radius, center[2] + radius)
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)
