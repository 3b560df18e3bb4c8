"""Plots written next to each report file.

Everything here renders to disk through the Agg backend so runs work on
headless machines; no function ever opens a window.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve_figure(log, path) -> None:
    """Per-iteration loss curves from a training log."""
    iters = [entry[0] for entry in log]
    total = [entry[2] for entry in log]
    cap = [entry[3] for entry in log]
    prop = [entry[4] for entry in log]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, total, color="black", lw=1.2, label="total")
    ax.plot(iters, cap, color="tab:blue", lw=0.8, alpha=0.7, label="caption")
    ax.plot(iters, prop, color="tab:red", lw=0.8, alpha=0.7, label="proposal")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def recall_curve_figure(table, path) -> None:
    """Recall against proposal budget, one line per tIoU threshold."""
    n = np.arange(1, table.recall.shape[0] + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, tau in enumerate(table.taus):
        ax.plot(n, table.recall[:, j], lw=1.2, label=f"tIoU {tau:g}")
    ax.set_xscale("log")
    ax.set_xlabel("proposals per video")
    ax.set_ylabel("recall")
    ax.set_ylim(0.0, 1.02)
    ax.legend(frameon=False, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def dense_bars_figure(per_threshold: dict, average: float, metric: str,
                      path) -> None:
    """One bar per tIoU threshold plus the averaged score line."""
    taus = sorted(per_threshold)
    vals = [per_threshold[t] for t in taus]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(taus)), vals, color="tab:blue", width=0.6)
    ax.axhline(average, color="black", lw=1.0, ls="--",
               label=f"mean {average:.4f}")
    ax.set_xticks(range(len(taus)))
    ax.set_xticklabels([f"{t:g}" for t in taus])
    ax.set_xlabel("tIoU threshold")
    ax.set_ylabel(metric)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def retrieval_loss_figure(losses, path) -> None:
    """Per-epoch hinge loss from retrieval training."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses, color="black", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("hinge loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def retrieval_bars_figure(report: dict, path) -> None:
    """Grouped recall bars for both retrieval directions."""
    labels = ("R@1", "R@5", "R@50")
    para = [report["paragraph_to_video"][k] for k in labels]
    vid = [report["video_to_paragraph"][k] for k in labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.18, para, width=0.36, color="tab:blue", label="paragraph to video")
    ax.bar(x + 0.18, vid, width=0.36, color="tab:orange", label="video to paragraph")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("recall")
    ax.set_ylim(0.0, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
