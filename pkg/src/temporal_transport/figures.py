"""Report figures rendered to files alongside the delimited output."""
from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _new_axes(n_panels: int = 1, width: float = 8.0):
    fig, axes = plt.subplots(1, n_panels,
                             figsize=(width, width * _GOLDEN / max(n_panels - 0.6, 1)))
    return fig, axes


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def simulation_figure(rows: Sequence[dict], path: str) -> None:
    """RMSE bars and coverage dots per estimator, grouped by sample size."""
    fig, (ax1, ax2) = _new_axes(2, width=9.0)
    ns = sorted({row["n"] for row in rows})
    estimators = list(dict.fromkeys(row["estimator"] for row in rows))
    width = 0.8 / len(ns)
    xs = range(len(estimators))
    for i, n in enumerate(ns):
        sub = {row["estimator"]: row for row in rows if row["n"] == n}
        offs = [x + (i - (len(ns) - 1) / 2) * width for x in xs]
        ax1.bar(offs, [sub[e]["rmse"] for e in estimators], width=width,
                label=f"n={n}")
        ax2.plot(offs, [sub[e]["coverage"] for e in estimators], "o",
                 label=f"n={n}")
    for ax, label in ((ax1, "RMSE"), (ax2, "coverage of 95% CI")):
        ax.set_xticks(list(xs))
        ax.set_xticklabels(estimators, rotation=30, ha="right")
        ax.set_ylabel(label)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    ax2.axhline(0.95, color="gray", linestyle="--", linewidth=1)
    ax2.set_ylim(0.8, 1.0)
    ax1.legend(frameon=False, fontsize=8)
    _save(fig, path)


def estimate_figure(rows: Sequence[dict], path: str) -> None:
    """Point estimates with confidence bars, one marker per result row."""
    fig, ax = _new_axes()
    labels = [str(row.get("estimator", i)) for i, row in enumerate(rows)]
    psis = [row["psi"] for row in rows]
    lows = [row["ci_low"] for row in rows]
    highs = [row["ci_high"] for row in rows]
    xs = range(len(rows))
    ax.errorbar(xs, psis,
                yerr=[[p - lo for p, lo in zip(psis, lows)],
                      [hi - p for p, hi in zip(psis, highs)]],
                fmt="o", capsize=4)
    ax.axhline(0.0, color="gray", linewidth=1)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("transported effect")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    _save(fig, path)


def calibration_figure(rows: Sequence[dict], path: str) -> None:
    """Rejection rate against the violation strength, with the nominal level."""
    fig, ax = _new_axes()
    kappas = [row["kappa"] for row in rows]
    rates = [row["rejection_rate"] for row in rows]
    alpha = rows[0].get("alpha", 0.05)
    ax.plot(kappas, rates, "o-")
    ax.axhline(alpha, color="gray", linestyle="--", linewidth=1)
    ax.set_xlabel("violation strength")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    _save(fig, path)


def cluster_figure(cluster_sizes: Sequence[int], path: str) -> None:
    """Histogram of cluster occupancy."""
    fig, ax = _new_axes()
    ax.bar(range(len(cluster_sizes)), sorted(cluster_sizes, reverse=True))
    ax.set_xlabel("cluster (sorted by size)")
    ax.set_ylabel("items")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    _save(fig, path)
