"""Numerical integration kernels.

Two tools cover every integral in the package:

* probabilists' Gauss-Hermite rules for expectations against the standard
  normal measure (the smoothing integrals over u and t), and
* a vectorized adaptive Gauss-Kronrod integrator for 1-D integrals over the
  channel output y and the decoupled-channel output z, where integrands can
  have sharp logistic-type transitions that defeat fixed Hermite rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import QuadratureError

MAX_HERMITE_ORDER = 200

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class HermiteRule:
    """Nodes and weights such that sum(weights * f(nodes)) approximates E[f(Z)], Z ~ N(0,1).

    Weights sum to one; the rule is exact for polynomials of degree <= 2*order - 1.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f):
        return float(np.sum(self.weights * f(self.nodes)))


@lru_cache(maxsize=64)
def _hermegauss_normalized(n: int):
    nodes, weights = hermegauss(n)
    weights = weights / _SQRT_2PI
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def hermite_rule(n: int) -> HermiteRule:
    """Gauss-Hermite rule of the given order for the standard normal weight."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_HERMITE_ORDER:
        raise ValueError(f"hermite order must be an integer in [1, {MAX_HERMITE_ORDER}], got {n!r}")
    nodes, weights = _hermegauss_normalized(int(n))
    return HermiteRule(order=int(n), nodes=nodes, weights=weights)


# 15-point Kronrod extension of 7-point Gauss on [-1, 1] (QUADPACK constants).
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
# Gauss-7 weights sit on the odd-indexed Kronrod abscissae.
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
    0.381830050505119, 0.279705391489277, 0.129484966168870,
])


@dataclass
class IntegralResult:
    """Adaptive integration outcome: value(s), achieved error estimate, cost."""

    value: float | np.ndarray
    error: float
    nevals: int
    panels: int


def _gk15_panels(f, los, his):
    """Evaluate Gauss-Kronrod 15 on a batch of panels.

    f maps a flat array of abscissae to values of shape (npts,) for scalar
    integrands or (k, npts) for vector integrands.  Returns the Kronrod
    estimates (shape (..., P)), a per-panel error estimate (P,), and the
    number of evaluations.
    """
    mid = 0.5 * (los + his)
    half = 0.5 * (his - los)
    pts = mid[:, None] + half[:, None] * _XK[None, :]
    fv = np.asarray(f(pts.reshape(-1)), dtype=float)
    if fv.ndim == 1:
        fv = fv.reshape(los.size, _XK.size)
    else:
        fv = fv.reshape(fv.shape[:-1] + (los.size, _XK.size))
    ik = np.sum(fv * _WK, axis=-1) * half
    ig = np.sum(fv[..., 1::2] * _WG, axis=-1) * half
    err = np.abs(ik - ig)
    if err.ndim > 1:
        err = err.max(axis=tuple(range(err.ndim - 1)))
    return ik, err, fv.size


def integrate_y(f, lo: float, hi: float, tol: float = 1e-10,
                max_panels: int = 4096, init_panels: int = 8) -> IntegralResult:
    """Adaptively integrate a vectorized integrand over [lo, hi].

    f takes a 1-D array of points and returns values of shape (n,) or, for
    simultaneous integration of several components over a shared grid, (k, n).
    The absolute-error target applies to each component.  Raises
    QuadratureError carrying the partial estimate if the panel budget is
    exhausted first.
    """
    lo = float(lo)
    hi = float(hi)
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        raise ValueError(f"invalid integration interval [{lo}, {hi}]")
    edges = np.linspace(lo, hi, init_panels + 1)
    los, his = edges[:-1], edges[1:]
    vals, errs, nev = _gk15_panels(f, los, his)
    nevals = nev
    while errs.sum() > tol:
        if los.size >= max_panels:
            partial = vals.sum(axis=-1)
            raise QuadratureError(
                f"integration over [{lo}, {hi}] did not reach tol={tol:g} "
                f"within {max_panels} panels (error estimate {errs.sum():.3e})",
                partial=partial if np.ndim(partial) else float(partial),
                error_estimate=float(errs.sum()),
            )
        # Split every panel whose error keeps the running total above target.
        cut = max(errs.sum() / (2.0 * los.size), np.max(errs) / 8.0)
        split = errs >= cut
        if not split.any():
            split = errs == errs.max()
        keep = ~split
        mids = 0.5 * (los[split] + his[split])
        new_los = np.concatenate([los[split], mids])
        new_his = np.concatenate([mids, his[split]])
        new_vals, new_errs, nev = _gk15_panels(f, new_los, new_his)
        nevals += nev
        los = np.concatenate([los[keep], new_los])
        his = np.concatenate([his[keep], new_his])
        vals = np.concatenate([vals[..., keep], new_vals], axis=-1)
        errs = np.concatenate([errs[keep], new_errs])
    total = vals.sum(axis=-1)
    return IntegralResult(
        value=total if np.ndim(total) else float(total),
        error=float(errs.sum()),
        nevals=nevals,
        panels=los.size,
    )


def gauss_expectation(f, mean: float, std: float, tol: float = 1e-12,
                      tail: float = 12.0, **kwargs):
    """Integrate f against a N(mean, std^2) density by adaptive quadrature.

    f is a vectorized function of the raw variable; the Gaussian weight is
    applied here.  Returns the IntegralResult value directly.
    """
    std = float(std)
    if std <= 0.0:
        fv = np.asarray(f(np.array([mean])), dtype=float)
        return fv[..., 0] if fv.ndim > 1 else float(fv[0])

    def weighted(z):
        w = np.exp(-0.5 * ((z - mean) / std) ** 2) / (std * _SQRT_2PI)
        return f(z) * w

    res = integrate_y(weighted, mean - tail * std, mean + tail * std, tol=tol, **kwargs)
    return res.value
