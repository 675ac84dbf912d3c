"""Figure rendering for verify and sweep reports.

Figures are written next to the JSON/CSV artifacts.  PNG metadata is pinned
so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "lvclab"}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def joint_table_figure(path, empirical, predicted, x0_support, x_support, title):
    """Grouped bars: empirical vs predicted mass per (x0, x) cell."""
    emp = np.asarray(empirical, dtype=float).reshape(-1)
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    labels = [f"({a0:g},{a:g})" for a0 in x0_support for a in x_support]
    pos = np.arange(emp.size)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * emp.size, 3.2))
    ax.bar(pos - 0.18, emp, width=0.36, label="empirical")
    ax.bar(pos + 0.18, pred, width=0.36, label="predicted")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=45 if emp.size > 8 else 0, fontsize=8)
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def pme_histogram_figure(path, pme_samples, cdf, title, bins: int = 60):
    """Histogram of empirical posterior means with the predicted bin masses."""
    pme = np.asarray(pme_samples, dtype=float)
    lo = min(pme.min(), -1.05)
    hi = max(pme.max(), 1.05)
    edges = np.linspace(lo, hi, bins + 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.hist(pme, bins=edges, density=True, alpha=0.6, label="empirical")
    cdf_vals = np.asarray(cdf(edges), dtype=float)
    centers = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    ax.step(centers, np.diff(cdf_vals) / widths, where="mid", color="k",
            label="predicted")
    ax.set_xlabel("posterior mean")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(path, rows, title):
    """Distance vs K with bootstrap error bars, one line per metric.

    rows: iterable of dicts with keys K, metric, estimate, ci_low, ci_high.
    """
    metrics = sorted({r["metric"] for r in rows})
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for metric in metrics:
        sel = sorted((r for r in rows if r["metric"] == metric), key=lambda r: r["K"])
        ks = np.array([r["K"] for r in sel], dtype=float)
        est = np.array([r["estimate"] for r in sel])
        lo = np.array([r["ci_low"] for r in sel])
        hi = np.array([r["ci_high"] for r in sel])
        ax.errorbar(ks, est, yerr=[est - lo, hi - est], marker="o", capsize=3,
                    label=metric)
    ax.set_xlabel("K")
    ax.set_ylabel("distance")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)
