"""Matplotlib figures rendered alongside the CSV outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_training_curves(metrics, path):
    epochs = [r["epoch"] for r in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [r["train_loss"] for r in metrics], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    for key, style in (("global_acc", "s-"), ("local_acc", "^-"), ("fused_acc", "o-")):
        ax2.plot(epochs, [r[key] for r in metrics], style, label=key)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("test accuracy")
    ax2.set_ylim(0, 1)
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(header, rows, mode, path):
    labels = [str(r[0]) for r in rows]
    fused = [float(r[-1]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.8 * len(rows)), 4))
    ax.bar(range(len(rows)), fused, color="#007A9A")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("fused accuracy")
    ax.set_title(f"ablation: {mode}")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_alphas(alphas, path):
    mean = np.asarray(alphas).mean(axis=0)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(1, len(mean) + 1), mean, color="#25A18E")
    ax.set_xlabel("time step")
    ax.set_ylabel("mean attention weight")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_heatmap_grid(heatmaps, path):
    n = len(heatmaps)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 2.2))
    if n == 1:
        axes = [axes]
    for ax, hm in zip(axes, heatmaps):
        ax.imshow(hm.values, cmap="inferno", vmin=0, vmax=1)
        ax.set_title(f"t={hm.step}", fontsize=8)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
