"""Matplotlib figures rendered next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .labels import IoUReport

_LABEL_COLORS = np.array([
    [0.05, 0.05, 0.05],   # background
    [0.85, 0.30, 0.30],
    [0.30, 0.80, 0.35],
    [0.30, 0.40, 0.90],
    [0.90, 0.85, 0.30],
    [0.80, 0.35, 0.85],
])


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    if len(values) < window * 2:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def render_loss_curves(reports, path: str) -> None:
    steps = np.array([r.step for r in reports])
    l_cls = np.array([r.l_cls for r in reports])
    l_kt = np.array([r.l_kt for r in reports])
    window = max(1, len(steps) // 100)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(steps, l_cls, alpha=0.25, lw=0.6, color="tab:blue")
    axes[0].plot(steps[:len(_smooth(l_cls, window))], _smooth(l_cls, window),
                 color="tab:blue")
    axes[0].set_title("classification loss")
    axes[0].set_xlabel("step")
    if np.any(l_kt > 0):
        axes[1].plot(steps, l_kt, alpha=0.25, lw=0.6, color="tab:orange")
        axes[1].plot(steps[:len(_smooth(l_kt, window))], _smooth(l_kt, window),
                     color="tab:orange")
    axes[1].set_title("transfer loss")
    axes[1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_iou_bars(report: IoUReport, names: list[str], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    xs = np.arange(len(names))
    colors = [_LABEL_COLORS[i % len(_LABEL_COLORS)] for i in range(len(names))]
    ax.bar(xs, report.iou, color=colors)
    ax.axhline(report.miou, color="k", ls="--", lw=1,
               label=f"mIoU {report.miou:.3f}")
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_bars(rows, path: str) -> None:
    arms = [r.arm for r in rows]
    train = [r.miou_train if r.miou_train is not None else 0.0 for r in rows]
    val = [r.miou_val if r.miou_val is not None else 0.0 for r in rows]
    xs = np.arange(len(arms))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 3.4))
    ax.bar(xs - width / 2, train, width, label="train split", color="tab:blue")
    ax.bar(xs + width / 2, val, width, label="val split", color="tab:orange")
    for x, t in zip(xs, train):
        ax.text(x - width / 2, t + 0.5, f"{t:.1f}", ha="center", fontsize=8)
    ax.set_xticks(xs)
    ax.set_xticklabels(arms, rotation=20, ha="right")
    ax.set_ylabel("pseudo-label mIoU (%)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _label_rgb(label_map: np.ndarray) -> np.ndarray:
    return _LABEL_COLORS[np.clip(label_map, 0, len(_LABEL_COLORS) - 1)]


def render_sample_panel(rows, path: str) -> None:
    """rows: (image [3,H,W], attention [C,H,W], pseudo [H,W], gt [H,W])."""
    if not rows:
        return
    n = len(rows)
    fig, axes = plt.subplots(n, 4, figsize=(7.2, 1.9 * n), squeeze=False)
    for i, (image, att, pseudo, gt) in enumerate(rows):
        axes[i][0].imshow(image.transpose(1, 2, 0))
        axes[i][1].imshow(att.max(axis=0), cmap="magma", vmin=0, vmax=1)
        axes[i][2].imshow(_label_rgb(pseudo))
        axes[i][3].imshow(_label_rgb(gt))
        for ax in axes[i]:
            ax.set_xticks([])
            ax.set_yticks([])
    for ax, title in zip(axes[0], ["image", "attention", "pseudo", "gt"]):
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
