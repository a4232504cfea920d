"""Matplotlib figures for runs and benchmark sweeps (rendered to files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def scatter_overlay(generated, target, path, title=None):
    """Two-color scatter of generated points over fresh target points."""
    generated = np.asarray(generated, float)
    target = np.asarray(target, float)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(target[:, 0], target[:, 1], s=6, alpha=0.45, c="#9aa0a6", label="target")
    ax.scatter(generated[:, 0], generated[:, 1], s=6, alpha=0.6, c="#d9480f", label="generated")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def training_curves(rows, path, title=None):
    """Loss and squared-Wasserstein curves over training steps.

    rows: iterable of (step, loss, w2_nfe1, w2_nfe2, ms_per_step).
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no metric rows to plot")
    steps = [r[0] for r in rows]
    fig, (ax_loss, ax_w2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(steps, [r[1] for r in rows], c="#1c7ed6")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("training loss")
    ax_loss.set_yscale("log")
    ax_w2.plot(steps, [r[2] for r in rows], c="#d9480f", label="NFE=1")
    ax_w2.plot(steps, [r[3] for r in rows], c="#2b8a3e", label="NFE=2")
    ax_w2.set_xlabel("step")
    ax_w2.set_ylabel(r"$W_2^2$")
    ax_w2.set_yscale("log")
    ax_w2.legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def bench_figure(table_rows, path):
    """Grouped bars of mean squared Wasserstein at NFE=1 per coupling and pair.

    table_rows: iterable of dicts with keys pair, coupling, w2_nfe1 (strings
    or floats; non-numeric cells are skipped).
    """
    data: dict[str, dict[str, float]] = {}
    for row in table_rows:
        try:
            value = float(row["w2_nfe1"])
        except (TypeError, ValueError):
            continue
        data.setdefault(row["pair"], {})[row["coupling"]] = value
    if not data:
        raise ValueError("no numeric rows to plot")
    pairs = sorted(data)
    couplings = sorted({c for per in data.values() for c in per})
    width = 0.8 / len(couplings)
    fig, ax = plt.subplots(figsize=(1.8 * len(pairs) + 2.5, 4))
    xs = np.arange(len(pairs))
    for k, coupling in enumerate(couplings):
        vals = [data[p].get(coupling, np.nan) for p in pairs]
        ax.bar(xs + (k - (len(couplings) - 1) / 2) * width, vals, width, label=coupling)
    ax.set_xticks(xs)
    ax.set_xticklabels(pairs, rotation=20, ha="right")
    ax.set_ylabel(r"$W_2^2$ at NFE=1")
    ax.set_yscale("log")
    ax.legend(frameon=False, ncol=min(3, len(couplings)))
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
