"""Figures written next to the TSV/JSONL reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def training_curve(history: list[dict], path, best_epoch: int | None = None):
    epochs = [r["epoch"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, [r["loss"] for r in history], label="joint")
    ax1.plot(epochs, [r["bpr"] for r in history], label="BPR", lw=1)
    if any(r["cl"] for r in history):
        ax1.plot(epochs, [r["cl"] for r in history], label="contrastive", lw=1)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(frameon=False, fontsize=8)
    ax2.plot(epochs, [r["val_R@20"] for r in history], color="k")
    if best_epoch:
        ax2.axvline(best_epoch, color="r", ls=":", lw=1)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation R@20")
    _save(fig, path)


def sweep_plot(rows: list[dict], axes: list[str], path, metric: str = "R@20"):
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    if len(axes) == 1:
        xs = [r[axes[0]] for r in rows]
        for m, style in ((metric, "o-"), (metric.replace("R@", "N@"), "s--")):
            ax.plot(range(len(xs)), [r[m] for r in rows], style, label=m)
        ax.set_xticks(range(len(xs)), [str(x) for x in xs])
        ax.set_xlabel(axes[0])
        ax.legend(frameon=False)
    else:
        a, b = axes[:2]
        av = sorted({r[a] for r in rows})
        bv = sorted({r[b] for r in rows})
        grid = np.full((len(av), len(bv)), np.nan)
        for r in rows:
            grid[av.index(r[a]), bv.index(r[b])] = r[metric]
        im = ax.imshow(grid, cmap="viridis", aspect="auto")
        ax.set_yticks(range(len(av)), [str(v) for v in av])
        ax.set_xticks(range(len(bv)), [str(v) for v in bv])
        ax.set_ylabel(a)
        ax.set_xlabel(b)
        fig.colorbar(im, ax=ax, label=metric)
    _save(fig, path)


def robustness_plot(rows: list[dict], path):
    masks = [r for r in rows if r["condition"].startswith("mask")]
    clean = next(r for r in rows if r["condition"] == "clean")
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    if masks:
        rates = [r["missing_rate"] for r in masks]
        ax.plot(rates, [r["R@20"] for r in masks], "o-", label="masked")
        ax.set_xlabel("missing rate")
    ax.axhline(clean["R@20"], color="k", ls=":", label="clean")
    for r in rows:
        if r["condition"].startswith("noise"):
            ax.axhline(r["R@20"], color="r", ls="--", label=r["condition"])
    ax.set_ylabel("test R@20")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)
