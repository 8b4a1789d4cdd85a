"""Figure rendering for training runs, evaluations, and baselines.

Every CLI path that writes delimited metrics also writes a PNG next to
them; these helpers keep all matplotlib usage in one place (Agg backend,
no display needed).
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_training_curves(rows: Sequence[dict], out_png: str):
    """Three panels: episode scores, losses, validation accuracy."""
    train_rows = [r for r in rows if "mean_score_gain" in r]
    val_rows = [r for r in rows if "val_accuracy" in r]
    fig, axes = plt.subplots(1, 3, figsize=(13.5, 4.0))

    ax = axes[0]
    its = [r["iteration"] for r in train_rows]
    ax.plot(its, [r["mean_final_score"] for r in train_rows], label="final score", lw=1.2)
    ax.plot(its, [r["mean_score_gain"] for r in train_rows], label="score gain", lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean episode score")
    ax.legend(fontsize=8)
    ax.set_title("training scores")

    ax = axes[1]
    ax.plot(its, [r["policy_loss"] for r in train_rows], label="policy", lw=1.0)
    ax.plot(its, [r["value_loss"] for r in train_rows], label="value", lw=1.0)
    ax.plot(its, [r["entropy"] for r in train_rows], label="entropy", lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.set_title("losses")

    ax = axes[2]
    if val_rows:
        ax.plot(
            [r["iteration"] for r in val_rows],
            [r["val_accuracy"] for r in val_rows],
            marker="o",
            ms=3,
            lw=1.2,
        )
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("validation")

    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_margin_histogram(initial: Sequence[float], final: Sequence[float], out_png: str):
    """Overlayed histograms of per-query margins before and after editing."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(initial, bins=20, alpha=0.55, label="initial prompt")
    ax.hist(final, bins=20, alpha=0.55, label="after edits")
    ax.set_xlabel("margin score")
    ax.set_ylabel("queries")
    ax.legend(fontsize=8)
    ax.set_title("score margins")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_method_comparison(scores: dict[str, float], accuracies: dict[str, float], out_png: str):
    """Grouped bars: mean final score and accuracy per method."""
    names = list(scores)
    xs = range(len(names))
    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))

    axes[0].bar(xs, [scores[n] for n in names], color="tab:blue")
    axes[0].set_xticks(list(xs))
    axes[0].set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    axes[0].set_ylabel("mean final score")
    axes[0].set_title("score")

    axes[1].bar(xs, [accuracies[n] for n in names], color="tab:orange")
    axes[1].set_xticks(list(xs))
    axes[1].set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    axes[1].set_ylabel("accuracy")
    axes[1].set_ylim(0, 1.02)
    axes[1].set_title("accuracy")

    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
