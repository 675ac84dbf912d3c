"""The decoupled prediction: a bank of scalar Gaussian channels.

At a solved fixed point with conjugates (G, E, F), the joint law of L input
components and their posterior samples is predicted by pushing each component
through z = x0 + noise0 (noise0 ~ N(0, F/E^2)) and applying the scalar
posterior built from the channel rho_G (noise variance 1/E) and the
quadratically modulated postulated prior.  This module evaluates that
prediction: joint tables / densities, the law of (x0, posterior mean), and
the sign error rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from . import quad
from .errors import CapabilityError, ModulationError
from .model import BlockPrior, Prior, iid_part
from .replica import ConjugateParams, scalar_posterior_stats

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DecoupledChannelPair:
    """Scalar Gaussian channels of the decoupled description.

    true_density is the channel carrying x0 to z (variance F/E^2);
    post_density is the channel the scalar detector postulates (variance 1/E).
    (G - F + E)/2 is the exponent modulating the postulated prior.
    """

    E: float
    F: float
    G: float = 0.0

    def __post_init__(self):
        if not (self.E > 0 and self.F > 0):
            raise ValueError(f"need E > 0 and F > 0, got E={self.E}, F={self.F}")

    @classmethod
    def from_conjugates(cls, conj: ConjugateParams) -> "DecoupledChannelPair":
        return cls(E=conj.E, F=conj.F, G=conj.G)

    @property
    def true_noise_var(self) -> float:
        return self.F / self.E ** 2

    @property
    def post_noise_var(self) -> float:
        return 1.0 / self.E

    @property
    def modulation(self) -> float:
        return 0.5 * (self.G - self.F + self.E)

    def true_density(self, z, x):
        d = np.asarray(z, dtype=float) - x
        return math.sqrt(self.E ** 2 / (2.0 * math.pi * self.F)) * \
            np.exp(-self.E ** 2 * d * d / (2.0 * self.F))

    def post_density(self, z, x):
        d = np.asarray(z, dtype=float) - x
        return math.sqrt(self.E / (2.0 * math.pi)) * np.exp(-self.E * d * d / 2.0)

    def conj(self) -> ConjugateParams:
        return ConjugateParams(G=self.G, E=self.E, F=self.F)


def rho_true(z, x, E: float, F: float):
    """Gaussian density of the channel carrying the true input to z."""
    return DecoupledChannelPair(E=E, F=F).true_density(z, x)


def rho_post(z, x, E: float):
    """Gaussian density of the postulated scalar channel."""
    return DecoupledChannelPair(E=E, F=1.0).post_density(z, x)


def modulated_prior(x, conj: ConjugateParams, prior) -> float:
    """Normalized modulated prior mass/density at the point(s) x.

    For a vector argument the value is the product over components (the
    modulated prior of a factorized prior factorizes).  Discrete priors
    return masses, continuous priors densities.
    """
    p = iid_part(prior)
    gamma = 0.5 * (conj.G - conj.F + conj.E)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if p.is_discrete:
        atoms = np.asarray(p.atoms)
        probs = np.asarray(p.atom_probs)
        w = probs * np.exp(gamma * atoms ** 2)
        w = w / w.sum()
        out = np.ones(())
        for xi in x:
            hit = np.isclose(atoms, xi)
            if not hit.any():
                return 0.0
            out = out * w[hit][0]
        return float(out)
    if p.kind == "gaussian":
        lam = 1.0 / p.variance - 2.0 * gamma
        if lam <= 0.0:
            raise ModulationError(
                f"modulation exponent {gamma:g} >= prior precision/2; "
                "the modulated prior does not normalize")
        var = 1.0 / lam
        return float(np.prod(np.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)))
    raise CapabilityError(f"modulated prior not available in closed form for kind {p.kind!r}")


def modulated_variance(conj: ConjugateParams, prior) -> float:
    """Second moment of the (centered) modulated prior; diagnostic helper."""
    _, _, m2 = iid_part(prior).tilted_moments(0.0, 0.5 * (conj.G - conj.F + conj.E))
    return float(m2)


# ---------------------------------------------------------------------------
# Predicted joint distribution
# ---------------------------------------------------------------------------

@dataclass
class DecoupledJoint:
    """Predicted joint law of (x0 components, posterior-sample components).

    kind "table": both sides discrete; `table` has shape
    (n_x0_atoms,)*L + (n_x_atoms,)*L and holds probabilities.
    kind "grid": continuous sides are tabulated on grids (L = 1 only) and
    `table` holds densities; `normalization` is always the quadrature audit
    of the exact density handle, not a sum over the comparison grid.
    """

    L: int
    kind: str
    x0_support: np.ndarray
    x_support: np.ndarray
    table: np.ndarray
    normalization: float

    def component_table(self, k: int = 0) -> np.ndarray:
        """Marginal (x0_k, x_k) table for one component (table kind)."""
        if self.kind != "table":
            raise CapabilityError("component_table needs a discrete joint")
        axes = tuple(i for i in range(self.L) if i != k) + \
            tuple(self.L + i for i in range(self.L) if i != k)
        return self.table.sum(axis=axes)

    def x0_marginal(self) -> np.ndarray:
        return self.table.sum(axis=tuple(range(self.L, 2 * self.L)))

    def flat(self) -> np.ndarray:
        return self.table.reshape(-1)


def _posterior_atom_masses(z, pair: DecoupledChannelPair, post: Prior):
    """Posterior mass of each postulated atom given z; shape (n_atoms, len(z))."""
    atoms = np.asarray(post.atoms, dtype=float)
    logp = np.log(np.asarray(post.atom_probs, dtype=float))
    c = 0.5 * (pair.G - pair.F)
    logits = logp[:, None] + c * (atoms ** 2)[:, None] + pair.E * np.outer(atoms, z)
    logits -= logits.max(axis=0, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=0, keepdims=True)


def _component_table(pair: DecoupledChannelPair, true_p: Prior, post_p: Prior,
                     z_tol: float = 1e-12) -> np.ndarray:
    """Exact per-component (x0, x) table for discrete priors."""
    sd = math.sqrt(pair.true_noise_var)
    t0 = np.asarray(true_p.atoms, dtype=float)
    p0 = np.asarray(true_p.atom_probs, dtype=float)
    out = np.zeros((t0.size, len(post_p.atoms)))
    for i, (a0, pa0) in enumerate(zip(t0, p0)):
        def f(z):
            return _posterior_atom_masses(z, pair, post_p)

        vals = quad.gauss_expectation(f, a0, sd, tol=z_tol)
        out[i] = pa0 * vals
    return out


def predicted_joint(L: int, conj: ConjugateParams, true_prior, post_prior,
                    z_tol: float = 1e-12, grid_points: int = 201,
                    grid_span: float = 6.0, block_order: int = 48) -> DecoupledJoint:
    """Evaluate the predicted joint law of the first L components.

    Factorized priors reduce to a product of exact one-component tables;
    a block prior over the first L components (L <= 3) goes through an
    L-dimensional tensor quadrature.  Continuous (gaussian) priors are
    returned as an L=1 density grid plus a quadrature normalization audit.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    pair = DecoupledChannelPair.from_conjugates(conj)
    true_block = isinstance(true_prior, BlockPrior)
    post_block = isinstance(post_prior, BlockPrior)
    true_iid = iid_part(true_prior)
    post_iid = iid_part(post_prior)

    if (true_block or post_block) and L > 3:
        raise CapabilityError("block-prior joints are supported only for L <= 3")

    if true_iid.is_discrete and post_iid.is_discrete:
        if not (true_block or post_block):
            comp = _component_table(pair, true_iid, post_iid, z_tol)
            table = comp
            for _ in range(L - 1):
                table = np.multiply.outer(table, comp)
            # outer() interleaves component axes as (x0_1, x_1, x0_2, x_2, ...)
            if L > 1:
                perm = [2 * i for i in range(L)] + [2 * i + 1 for i in range(L)]
                table = table.transpose(perm)
            return DecoupledJoint(L=L, kind="table",
                                  x0_support=np.asarray(true_iid.atoms),
                                  x_support=np.asarray(post_iid.atoms),
                                  table=table, normalization=float(table.sum()))
        return _predicted_joint_block(L, pair, true_prior, post_prior, block_order)

    if L != 1:
        raise CapabilityError("continuous-prior joints are tabulated for L = 1 only")
    return _predicted_joint_continuous(pair, true_iid, post_iid, z_tol,
                                       grid_points, grid_span)


def _block_table(prior, L: int):
    """(support, table) for the first L components of a possibly-block prior."""
    if isinstance(prior, BlockPrior):
        if prior.L != L:
            raise CapabilityError(f"block prior has L={prior.L}, requested {L}")
        return np.asarray(prior.atoms, dtype=float), prior.table
    p = iid_part(prior)
    atoms = np.asarray(p.atoms, dtype=float)
    probs = np.asarray(p.atom_probs, dtype=float)
    table = probs
    for _ in range(L - 1):
        table = np.multiply.outer(table, probs)
    return atoms, table


def _predicted_joint_block(L: int, pair: DecoupledChannelPair, true_prior, post_prior,
                           order: int) -> DecoupledJoint:
    """Tensor-quadrature evaluation when either prior couples the block."""
    a0, t0 = _block_table(true_prior, L)
    ax, tx = _block_table(post_prior, L)
    rule = quad.hermite_rule(order)
    sd = math.sqrt(pair.true_noise_var)
    gamma = pair.modulation
    x_rows = np.array(list(product(range(ax.size), repeat=L)))
    x_vals = ax[x_rows]
    log_pref = np.log(np.clip(tx.reshape(-1), 1e-300, None)) \
        + gamma * (x_vals ** 2).sum(axis=1)

    table = np.zeros(t0.shape + tx.shape)
    for idx0 in product(range(a0.size), repeat=L):
        w0 = t0[idx0]
        if w0 <= 0.0:
            continue
        mu = a0[list(idx0)]
        # tensor Gauss-Hermite over z standardized around x0
        acc = np.zeros(x_rows.shape[0])
        for znodes in product(range(rule.order), repeat=L):
            zw = math.prod(rule.weights[j] for j in znodes)
            z = mu + sd * rule.nodes[list(znodes)]
            logits = log_pref - 0.5 * pair.E * ((z[None, :] - x_vals) ** 2).sum(axis=1)
            logits = logits - logits.max()
            w = np.exp(logits)
            acc += zw * w / w.sum()
        table[idx0] = (w0 * acc).reshape(tx.shape)
    return DecoupledJoint(L=L, kind="table", x0_support=a0, x_support=ax,
                          table=table, normalization=float(table.sum()))


def _predicted_joint_continuous(pair, true_p: Prior, post_p: Prior, z_tol,
                                grid_points, grid_span) -> DecoupledJoint:
    """L=1 joint on a grid for gaussian priors, audit by nested quadrature."""
    if true_p.kind != "gaussian" or post_p.kind != "gaussian":
        raise CapabilityError(
            "continuous predicted joints support gaussian priors "
            f"(got {true_p.kind!r} / {post_p.kind!r})")
    v0 = true_p.variance
    lam = 1.0 / post_p.variance + pair.F - pair.G
    if lam <= 0.0:
        raise ModulationError("posterior precision is not positive; joint diverges")
    # x | z is N(E z / lam, 1/lam); z | x0 is N(x0, F/E^2); marginalizing z
    # keeps everything gaussian.
    shrink = pair.E / lam
    var_x_given_x0 = 1.0 / lam + shrink ** 2 * pair.true_noise_var

    def density(x0, x):
        p0 = np.exp(-0.5 * x0 ** 2 / v0) / math.sqrt(2.0 * math.pi * v0)
        d = x - shrink * x0
        return p0 * np.exp(-0.5 * d * d / var_x_given_x0) / \
            math.sqrt(2.0 * math.pi * var_x_given_x0)

    s0 = grid_span * math.sqrt(v0)
    sx = grid_span * math.sqrt(shrink ** 2 * v0 + var_x_given_x0)
    g0 = np.linspace(-s0, s0, grid_points)
    gx = np.linspace(-sx, sx, grid_points)
    table = density(g0[:, None], gx[None, :])

    def x_marginal_mass(x0):
        return np.exp(-0.5 * x0 ** 2 / v0) / math.sqrt(2.0 * math.pi * v0)

    audit = quad.integrate_y(x_marginal_mass, -12 * math.sqrt(v0), 12 * math.sqrt(v0),
                             tol=z_tol).value
    return DecoupledJoint(L=1, kind="grid", x0_support=g0, x_support=gx,
                          table=table, normalization=float(audit))


# ---------------------------------------------------------------------------
# Predicted law of (x0, posterior mean) and the sign error rate
# ---------------------------------------------------------------------------

class PmeLaw:
    """Pushforward of the decoupled channel through the scalar posterior mean.

    Exposes sampling, the cdf of the posterior-mean coordinate (the mean map
    is nondecreasing in z, its derivative being E times a posterior
    variance), and moment summaries.
    """

    def __init__(self, conj: ConjugateParams, true_prior, post_prior):
        self.conj = conj
        self.pair = DecoupledChannelPair.from_conjugates(conj)
        self.true_prior = iid_part(true_prior)
        self.post_prior = iid_part(post_prior)
        self.noise_sd = math.sqrt(self.pair.true_noise_var)

    def mean_map(self, z):
        mean, _ = scalar_posterior_stats(z, self.conj, self.post_prior)
        return mean

    def sample(self, n: int, rng):
        x0 = self.true_prior.sample(n, rng)
        z = x0 + self.noise_sd * rng.standard_normal(n)
        return x0, self.mean_map(z)

    def _z_bracket(self):
        comps = self.true_prior.gaussian_components()
        lo = min(mu - 12.0 * math.sqrt(v + self.pair.true_noise_var) for _, mu, v in comps)
        hi = max(mu + 12.0 * math.sqrt(v + self.pair.true_noise_var) for _, mu, v in comps)
        return lo, hi

    def pme_cdf(self, values):
        """P(posterior mean <= value) under the predicted law, vectorized."""
        values = np.atleast_1d(np.asarray(values, dtype=float))
        lo, hi = self._z_bracket()
        glo = float(self.mean_map(np.array([lo]))[0])
        ghi = float(self.mean_map(np.array([hi]))[0])
        out = np.zeros(values.size)
        for j, v in enumerate(values):
            if v < glo:
                out[j] = 0.0
                continue
            if v >= ghi:
                out[j] = 1.0
                continue
            zv = brentq(lambda z: float(self.mean_map(np.array([z]))[0]) - v, lo, hi,
                        xtol=1e-13)
            acc = 0.0
            for w, mu, var in self.true_prior.gaussian_components():
                sd = math.sqrt(var + self.pair.true_noise_var)
                acc += w * norm.cdf((zv - mu) / sd)
            out[j] = acc
        return out if out.size > 1 else float(out[0])

    def cdf_table(self, points: int = 2001):
        """(values, cdf) pairs for interpolation, dense where the law has mass.

        Built by pushing a probability ladder of z-quantiles (per mixture
        component) through the monotone mean map, so the table is exact at
        its nodes even when the posterior mean saturates.
        """
        comps = self.true_prior.gaussian_components()
        ladder = norm.ppf(np.linspace(1e-10, 1.0 - 1e-10, points))
        zs = np.unique(np.concatenate([
            mu + math.sqrt(v + self.pair.true_noise_var) * ladder
            for _, mu, v in comps]))
        values = np.asarray(self.mean_map(zs), dtype=float)
        cdf = np.zeros(zs.size)
        for w, mu, v in comps:
            sd = math.sqrt(v + self.pair.true_noise_var)
            cdf += w * norm.cdf((zs - mu) / sd)
        # enforce monotone values for interpolation (ties can appear at saturation)
        order = np.argsort(values, kind="stable")
        return values[order], cdf[order]

    def mean_overlap(self, z_tol: float = 1e-12) -> float:
        """E[x0 * posterior mean]; equals the overlap m at a fixed point."""
        total = 0.0
        for w, mu, v in self.true_prior.gaussian_components():
            var_z = v + self.pair.true_noise_var
            shrink = v / var_z

            def f(z):
                return (mu + shrink * (z - mu)) * self.mean_map(z)

            total += w * quad.gauss_expectation(f, mu, math.sqrt(var_z), tol=z_tol)
        return float(total)

    def error_rate(self) -> float:
        """P(sign(posterior mean) != x0) for a sign alphabet."""
        atoms = np.asarray(self.true_prior.atoms, dtype=float)
        if atoms.size == 0 or np.any(atoms == 0.0):
            raise CapabilityError("sign error rate needs a discrete prior without a 0 atom")
        lo, hi = self._z_bracket()
        glo = float(self.mean_map(np.array([lo]))[0])
        ghi = float(self.mean_map(np.array([hi]))[0])
        if glo >= 0.0:
            zstar = lo
        elif ghi <= 0.0:
            zstar = hi
        else:
            zstar = brentq(lambda z: float(self.mean_map(np.array([z]))[0]), lo, hi,
                           xtol=1e-13)
        ber = 0.0
        sd = self.noise_sd
        for a, p in zip(atoms, np.asarray(self.true_prior.atom_probs)):
            below = norm.cdf((zstar - a) / sd)
            ber += p * (below if a > 0 else 1.0 - below)
        return float(ber)


def predicted_pme_law(conj: ConjugateParams, true_prior, post_prior) -> PmeLaw:
    return PmeLaw(conj, true_prior, post_prior)


def ber(conj: ConjugateParams, true_prior, post_prior) -> float:
    """Predicted sign error rate of the posterior mean detector."""
    return PmeLaw(conj, true_prior, post_prior).error_rate()
