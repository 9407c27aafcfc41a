"""Report figures rendered to files next to the CSV outputs.

Non-map diagnostics only: partial-effect intervals, barrier-probability
histograms with their thresholds, and scalar trace plots.  Spatial
results are exported as GeoJSON elsewhere; map rendering is out of
scope.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sampler import ChainOutput
from .summarize import BarrierReport


def plot_partial_effects(
    effects: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]],
    names: Sequence[str],
    path,
) -> None:
    """Interval plot of covariate effects per model.

    ``effects`` maps a model label to (mean, lower, upper) arrays over
    the predictors in ``names``.
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    d = len(names)
    k = max(len(effects), 1)
    for idx, (label, (mean, lo, hi)) in enumerate(effects.items()):
        x = np.arange(d) + (idx - (k - 1) / 2) * 0.15
        ax.errorbar(
            x,
            mean,
            yerr=[np.asarray(mean) - np.asarray(lo), np.asarray(hi) - np.asarray(mean)],
            fmt="o",
            capsize=3,
            label=label,
        )
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xticks(np.arange(d))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("partial effect")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_barrier_probabilities(report: BarrierReport, path) -> None:
    """Histograms of the per-edge posterior barrier probabilities."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, which, thr in (
        (axes[0], "alpha", report.alpha_threshold),
        (axes[1], "beta", report.beta_threshold),
    ):
        probs = [getattr(e, f"p_barrier_{which}") for e in report.edges]
        ax.hist(probs, bins=np.linspace(0, 1, 21), color="darkgrey", edgecolor="white")
        ax.axvline(thr, color="crimson", lw=1.2)
        ax.set_title(f"barriers for {which}")
        ax.set_xlabel("posterior P(barrier)")
    axes[0].set_ylabel("borders")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_mse_comparison(table, path) -> None:
    """Grouped bars of in-sample and out-of-sample MSE per model."""
    labels = [r.family.value for r in table.rows]
    mse_in = [r.mse_in for r in table.rows]
    mse_out = [r.mse_out for r in table.rows]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.18, mse_in, width=0.36, label="MSE in")
    ax.bar(x + 0.18, mse_out, width=0.36, label="MSE out")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("mean squared error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_traces(chain: ChainOutput, path, params: Sequence[str] | None = None) -> None:
    """Trace plots of retained scalar draws."""
    names = list(params) if params is not None else chain.scalar_names()
    names = [p for p in names if p in chain.draws and chain.draws[p].ndim == 1]
    if not names:
        raise ValueError("no scalar parameters to plot")
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 1.8 * len(names)), sharex=True)
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        ax.plot(chain.draws[name], lw=0.6)
        ax.set_ylabel(name, fontsize=8)
    axes[-1].set_xlabel("retained draw")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
