"""Distances, independence gaps, and bootstrap intervals for verification.

Everything here compares an empirical SampleSet against a decoupled
prediction (or against itself, for independence checks), and is deterministic
given the input data and a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mc import SampleSet


@dataclass
class ComparisonReport:
    kind: str
    estimate: float
    ci_low: float
    ci_high: float
    level: float
    sample_size: int
    prediction_id: str = ""
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {
            "kind": self.kind,
            "estimate": self.estimate,
            "ci": [self.ci_low, self.ci_high],
            "level": self.level,
            "sample_size": self.sample_size,
            "prediction_id": self.prediction_id,
            "warnings": list(self.warnings),
        }


def tv_discrete(p, q) -> float:
    """Total variation distance (1/2) sum |p - q| between two tables."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def ks_statistic(sample, cdf) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a cdf callable."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 100:
        raise ValueError(f"ks statistic needs at least 100 samples, got {n}")
    f = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def _mean_cross_distance(xs: np.ndarray, ys: np.ndarray, block: int = 2048) -> float:
    """Average euclidean distance over all pairs, block-wise to cap memory."""
    total = 0.0
    for start in range(0, xs.shape[0], block):
        chunk = xs[start:start + block]
        d = chunk[:, None, :] - ys[None, :, :]
        total += np.sqrt((d * d).sum(axis=-1)).sum()
    return total / (xs.shape[0] * ys.shape[0])


def energy_distance(xs, ys, max_points: int | None = None, rng=None) -> float:
    """Energy distance sqrt(2 E|X-Y| - E|X-X'| - E|Y-Y'|) between samples.

    xs and ys are (n, d) arrays (1-D inputs are promoted).  Pairwise terms
    use all pairs (V-statistic), matching the scipy 1-D convention.  When
    max_points is given, both samples are subsampled without replacement to
    cap the quadratic cost.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[0] == 1 and xs.shape[1] > 1 and ys.ndim == 2 and ys.shape[0] != 1:
        xs = xs.T
    if ys.shape[0] == 1 and ys.shape[1] > 1:
        ys = ys.T
    if max_points is not None:
        rng = rng or np.random.default_rng(0)
        if xs.shape[0] > max_points:
            xs = xs[rng.choice(xs.shape[0], max_points, replace=False)]
        if ys.shape[0] > max_points:
            ys = ys[rng.choice(ys.shape[0], max_points, replace=False)]
    a = _mean_cross_distance(xs, ys)
    b = _mean_cross_distance(xs, xs)
    c = _mean_cross_distance(ys, ys)
    return float(math.sqrt(max(2.0 * a - b - c, 0.0)))


def _component_categories(samples: SampleSet, component: int):
    """Map (x0_k, x_k) pairs onto integer categories over the joint support."""
    x0 = samples.x0[:, component]
    x = samples.x[:, component]
    a0 = np.unique(samples.x0)
    ax = np.unique(samples.x)
    i0 = np.searchsorted(a0, x0)
    ix = np.searchsorted(ax, x)
    return i0 * ax.size + ix, a0.size * ax.size


def component_joint_table(samples: SampleSet, component: int,
                          x0_support, x_support) -> np.ndarray:
    """Empirical (x0_k, x_k) table on the given supports."""
    a0 = np.asarray(x0_support, dtype=float)
    ax = np.asarray(x_support, dtype=float)
    i0 = np.argmin(np.abs(samples.x0[:, component][:, None] - a0[None, :]), axis=1)
    ix = np.argmin(np.abs(samples.x[:, component][:, None] - ax[None, :]), axis=1)
    counts = np.bincount(i0 * ax.size + ix, minlength=a0.size * ax.size)
    return counts.reshape(a0.size, ax.size) / samples.trials


def independence_gap(samples: SampleSet, min_expected: float = 50.0):
    """TV between the empirical two-component joint and the product of the
    empirical per-component joints.

    Returns (gap, warnings).  Requires L = 2 and discrete supports; a
    warning flags cells whose expected occupancy is below min_expected.
    """
    if samples.L != 2:
        raise ValueError(f"independence gap needs L = 2 records, got L={samples.L}")
    c1, ncat = _component_categories(samples, 0)
    c2, _ = _component_categories(samples, 1)
    n = samples.trials
    joint = np.bincount(c1 * ncat + c2, minlength=ncat * ncat).astype(float) / n
    m1 = np.bincount(c1, minlength=ncat).astype(float) / n
    m2 = np.bincount(c2, minlength=ncat).astype(float) / n
    gap = tv_discrete(joint, np.outer(m1, m2).reshape(-1))
    warnings = []
    if n / (ncat * ncat) < min_expected:
        warnings.append(
            f"fewer than {min_expected:.0f} samples per joint cell expected "
            f"(n={n}, cells={ncat * ncat})")
    return gap, warnings


def bootstrap_ci(statistic, samples: SampleSet, resamples: int = 1000,
                 level: float = 0.95, rng=None):
    """Percentile bootstrap over trial records.

    statistic maps a SampleSet to a float; trials are resampled with
    replacement, preserving the (x0, x, pme) triplets row-wise.
    """
    if resamples < 200:
        raise ValueError(f"resamples must be >= 200, got {resamples}")
    rng = rng or np.random.default_rng(0)
    n = samples.trials
    values = np.empty(resamples)
    for b in range(resamples):
        idx = rng.integers(0, n, size=n)
        boot = SampleSet(shape=samples.shape, L=samples.L, x0=samples.x0[idx],
                         x=samples.x[idx], pme=samples.pme[idx],
                         master_seed=samples.master_seed, sampler=samples.sampler,
                         ensemble=samples.ensemble, trials=n)
        values[b] = statistic(boot)
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
