"""Figures written next to the CSV outputs (Agg backend, files only)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import ScoreSet, eer, roc  # noqa: E402


def plot_roc(scores: ScoreSet, path, title="ROC"):
    _, far, frr = roc(scores)
    e = eer(scores)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    # log-FAR axis: clamp zero FAR to the smallest resolvable rate
    floor = 0.5 / scores.impostor.size
    ax.plot(np.maximum(far, floor), frr, lw=1.5)
    ax.plot([e], [e], "o", ms=4, label=f"EER {e:.4f}")
    ax.set_xscale("log")
    ax.set_xlabel("FAR")
    ax.set_ylabel("FRR")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_score_hist(scores: ScoreSet, path, title="score distributions"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lo = min(scores.genuine.min(), scores.impostor.min())
    hi = max(scores.genuine.max(), scores.impostor.max())
    bins = np.linspace(lo, hi if hi > lo else lo + 1, 40)
    ax.hist(scores.genuine, bins, alpha=0.6, density=True, label="genuine")
    ax.hist(scores.impostor, bins, alpha=0.6, density=True, label="impostor")
    ax.set_xlabel("distance")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss(epoch_loss, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(1, len(epoch_loss) + 1), epoch_loss, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean ETL")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
