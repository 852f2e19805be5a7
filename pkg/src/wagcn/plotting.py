"""Figures written next to the CSV/JSON reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "wagcn",
}


def _save(fig, path):
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_score_curve(video_id, frame_scores, intervals, path):
    """Anomaly score per frame with ground-truth intervals shaded."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.2))
        for start, end in intervals:
            ax.axvspan(start, end, color="tab:red", alpha=0.25, lw=0)
        ax.plot(np.arange(len(frame_scores)), frame_scores, color="tab:blue", lw=1.0)
        ax.set_ylim(0, 1)
        ax.set_xlim(0, max(len(frame_scores) - 1, 1))
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        ax.set_title(video_id, fontsize=9)
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(rows, path):
    """AUC against training sampling length."""
    Ts = [r["T"] for r in rows]
    aucs = [100 * r["auc"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 2.4))
        ax.plot(Ts, aucs, marker="o", color="tab:blue")
        ax.set_xlabel("sampling length T")
        ax.set_ylabel("AUC (%)")
        fig.tight_layout()
        _save(fig, path)


def plot_ablation(rows, path):
    names = [r["name"] for r in rows]
    aucs = [100 * r["auc"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.6))
        ax.barh(np.arange(len(rows)), aucs, color="tab:gray")
        ax.set_yticks(np.arange(len(rows)), names)
        ax.invert_yaxis()
        lo = min(aucs)
        ax.set_xlim(max(0.0, lo - 5), 100)
        ax.set_xlabel("AUC (%)")
        fig.tight_layout()
        _save(fig, path)
