"""Figure rendering for training logs and metrics reports.

Figures are written next to the delimited/JSON outputs they visualize, via a
temp file + rename so partial images are never left behind.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save_atomic(fig, path) -> None:
    tmp = str(path) + ".tmp"
    fig.savefig(tmp, format="png", dpi=110, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def render_training_curves(entries: list[dict], path) -> None:
    """Loss / learning-rate / cluster-count curves from a training log."""
    steps = [e["step"] for e in entries if "loss" in e]
    losses = [e["loss"] for e in entries if "loss" in e]
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)

    axes[0].plot(steps, losses, lw=0.8, label="total")
    cluster = [(e["step"], e["loss_cluster"]) for e in entries if "loss_cluster" in e]
    label = [(e["step"], e["loss_label"]) for e in entries
             if e.get("loss_label") not in (None, 0.0)]
    if cluster:
        axes[0].plot(*zip(*cluster), lw=0.8, alpha=0.7, label="cluster")
    if label:
        axes[0].plot(*zip(*label), lw=0.8, alpha=0.7, label="label reg")
    axes[0].set_ylabel("loss (batch sum)")
    axes[0].legend(loc="upper right", fontsize=8)

    lrs = [(e["step"], e["lr"]) for e in entries if "lr" in e]
    if lrs:
        axes[1].plot(*zip(*lrs), lw=0.8, color="tab:green")
    axes[1].set_ylabel("learning rate")

    ks = [(e["step"], e["K"]) for e in entries if isinstance(e.get("K"), int)]
    singleton = [e["step"] for e in entries if e.get("K") == "singleton"]
    if ks:
        axes[2].step(*zip(*ks), where="post", color="tab:red")
        axes[2].set_yscale("log", base=2)
    if singleton:
        axes[2].axvspan(min(singleton), max(singleton), color="gray", alpha=0.2,
                        label="singleton regime")
        axes[2].legend(loc="upper left", fontsize=8)
    axes[2].set_ylabel("clusters K")
    axes[2].set_xlabel("step")

    fig.suptitle(os.path.basename(str(path)).replace("_curves.png", ""))
    _save_atomic(fig, path)


def render_metrics_chart(report, path) -> None:
    """Bar chart of P@k and R@k from a MetricsReport."""
    fig, (ax_p, ax_r) = plt.subplots(1, 2, figsize=(8, 3.2))
    p_ks = sorted(report.precision)
    r_ks = sorted(report.recall)
    ax_p.bar([f"@{k}" for k in p_ks], [report.precision[k] for k in p_ks],
             color="tab:blue")
    ax_p.set_title("precision")
    ax_r.bar([f"@{k}" for k in r_ks], [report.recall[k] for k in r_ks],
             color="tab:orange")
    ax_r.set_title("recall")
    for ax in (ax_p, ax_r):
        ax.set_ylim(0, 1.0)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(f"{report.n_evaluated} instances evaluated")
    fig.tight_layout()
    _save_atomic(fig, path)
