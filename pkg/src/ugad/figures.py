"""Figure rendering for the report paths.

Every reporting verb writes its delimited output first; these helpers render
a companion PNG next to it. All plotting uses the Agg backend so the CLI
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_roc_figure(roc_points, auc: float, task: str, path) -> None:
    fpr = [p[0] for p in roc_points]
    tpr = [p[1] for p in roc_points]
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    ax.plot(fpr, tpr, lw=1.6, label=f"AUC = {auc:.4f}")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey", label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC ({task} anomalies)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_heatmap(alphas, betas, auc_grid, metric_name: str, path) -> None:
    """Heatmap of AUC over the patch/subgraph weight grid."""
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    grid = np.asarray(auc_grid, dtype=float)
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(betas)), [f"{b:g}" for b in betas])
    ax.set_yticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_xlabel("beta")
    ax.set_ylabel("alpha")
    ax.set_title(metric_name)
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_lines(rows, x_key: str, path) -> None:
    """AUC versus one swept quantity; one line per task, mean over seeds."""
    xs = sorted({r[x_key] for r in rows})
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    for task, key in (("node", "node_auc"), ("edge", "edge_auc")):
        means = [np.mean([r[key] for r in rows if r[x_key] == x]) for x in xs]
        ax.plot(xs, means, marker="o", ms=3.5, lw=1.4, label=f"{task} AUC")
    ax.set_xlabel(x_key)
    ax.set_ylabel("AUC")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_correlation_trend(rows, path) -> None:
    """Node/edge AUC versus the achieved anomaly-coupling value."""
    rows = sorted(rows, key=lambda r: r["achieved"])
    x = [r["achieved"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    ax.plot(x, [r["node_auc"] for r in rows], marker="o", ms=3.5, lw=1.2, label="node AUC")
    ax.plot(x, [r["edge_auc"] for r in rows], marker="s", ms=3.5, lw=1.2, label="edge AUC")
    ax.set_xlabel("achieved anomaly correlation")
    ax.set_ylabel("AUC")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
