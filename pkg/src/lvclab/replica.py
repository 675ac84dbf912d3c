"""Replica-symmetric saddle point of the random linear vector channel.

The description couples four order parameters (r0, r, m, q) to three
conjugates (G, E, F) through six self-consistency equations:

* (G, E, F) are double integrals over the output y and a standard normal t,
  built from the true and postulated channels smoothed by Gaussians of
  variance beta*(r0 - m^2/q) and beta*(r - q);
* (r, m, q) are moments of the scalar posterior mean under the decoupled
  Gaussian channel z = x0 + noise, noise variance F/E^2.

The duplicated printed equation for r and q is resolved here as
r = average posterior second moment and q = average squared posterior mean:
the postulated smoothing variance is beta*(r - q), which must be the
(nonnegative) posterior variance; r identical to q would collapse the
smoothed channel onto the bare one and the equations would lose their
unknown.  See README for the full note.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import quad
from .errors import ConvergenceError
from .model import (ChannelModel, GaussianChannel, iid_part)

_TINY = 1e-300
_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderParams:
    """r0: prior second moment; r: posterior second moment;
    m: input-estimate overlap; q: squared-posterior-mean overlap."""

    r0: float
    r: float
    m: float
    q: float

    def validate(self, tol: float = 1e-9):
        if self.r - self.q < -tol:
            raise ValueError(f"need r >= q (posterior variance), got r={self.r}, q={self.q}")
        if self.q > 0 and self.r0 - self.m ** 2 / self.q < -tol:
            raise ValueError(f"need r0 >= m^2/q, got r0={self.r0}, m={self.m}, q={self.q}")

    def as_dict(self):
        return {"r0": self.r0, "r": self.r, "m": self.m, "q": self.q}


@dataclass(frozen=True)
class ConjugateParams:
    """Duals of the order parameters. E and F parameterize the decoupled
    scalar Gaussian channels; (G - F + E)/2 modulates the postulated prior;
    G0 vanishes at every solution and is pinned to 0."""

    G: float
    E: float
    F: float
    G0: float = 0.0

    def validate(self):
        if not (self.E > 0 and self.F > 0):
            raise ValueError(f"need E > 0 and F > 0, got E={self.E}, F={self.F}")

    def as_dict(self):
        return {"G": self.G, "E": self.E, "F": self.F, "G0": self.G0}


@dataclass(frozen=True)
class FixedPoint:
    order: OrderParams
    conj: ConjugateParams
    free_energy: float
    residual: float
    iterations: int
    converged: bool
    init_labels: tuple

    def as_dict(self):
        return {
            "order": self.order.as_dict(),
            "conj": self.conj.as_dict(),
            "free_energy": self.free_energy,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "init_labels": list(self.init_labels),
        }


@dataclass(frozen=True)
class QuadOptions:
    hermite_t: int = 40
    hermite_u: int = 40
    y_tol: float = 1e-11
    z_tol: float = 1e-12
    force_quadrature: bool = False


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-9
    damping: float = 0.5
    damping_floor: float = 0.01
    max_iterations: int = 10000
    initializations: tuple = ("informed", "uninformed")
    distinct_tol: float = 1e-5
    tie_tol: float = 1e-9
    q_floor: float = 1e-12
    q_seed: float = 1e-6
    quad: QuadOptions = field(default_factory=QuadOptions)


# ---------------------------------------------------------------------------
# Effective (Gaussian-smoothed) channels
# ---------------------------------------------------------------------------

def _signal_coef(order: OrderParams, beta: float) -> float:
    """sqrt(beta) * m / sqrt(q), with the 0/0 convention m^2/q -> 0."""
    if order.q < 1e-12 and abs(order.m) < 1e-12:
        return 0.0
    return math.sqrt(beta) * order.m / math.sqrt(order.q)


def _true_smooth_var(order: OrderParams, beta: float) -> float:
    if order.q < 1e-12 and abs(order.m) < 1e-12:
        ratio = 0.0
    else:
        ratio = order.m ** 2 / order.q
    return max(beta * (order.r0 - ratio), 0.0)


def _post_smooth_var(order: OrderParams, beta: float) -> float:
    return max(beta * (order.r - order.q), 0.0)


class EffectiveChannel:
    """A scalar channel smoothed by a zero-mean Gaussian in its input mean.

    density(y, t, deriv) evaluates the smoothed density (or its input-mean
    derivatives) at input mean_coef * t.  Gaussian channels take the exact
    convolution shortcut; anything else goes through a Hermite sum over the
    smoothing variable.
    """

    def __init__(self, channel, mean_coef: float, smooth_var: float, urule=None):
        self.channel = channel
        self.mean_coef = float(mean_coef)
        self.smooth_var = max(float(smooth_var), 0.0)
        self.analytic = isinstance(channel, GaussianChannel)
        if self.analytic:
            self.var = channel.sigma2 + self.smooth_var
        else:
            if self.smooth_var > 0.0:
                rule = urule or quad.hermite_rule(40)
                self.offsets = math.sqrt(self.smooth_var) * rule.nodes
                self.uweights = rule.weights
            else:
                self.offsets = np.zeros(1)
                self.uweights = np.ones(1)

    def density(self, y, t, deriv: int = 0):
        y = np.asarray(y, dtype=float)
        mu = self.mean_coef * t
        if self.analytic:
            d = y - mu
            base = np.exp(-0.5 * d * d / self.var) / math.sqrt(2.0 * math.pi * self.var)
            if deriv == 0:
                return base
            if deriv == 1:
                return d / self.var * base
            if deriv == 2:
                return (d * d - self.var) / self.var ** 2 * base
            raise ValueError(f"deriv must be 0, 1 or 2, got {deriv}")
        means = mu + self.offsets
        yy = y[..., None]
        if deriv == 0:
            vals = self.channel.density(yy, means)
        elif deriv == 1:
            vals = self.channel.d1(yy, means)
        elif deriv == 2:
            vals = self.channel.d2(yy, means)
        else:
            raise ValueError(f"deriv must be 0, 1 or 2, got {deriv}")
        return np.sum(vals * self.uweights, axis=-1)

    def y_domain(self, t_lo: float, t_hi: float):
        mus = (self.mean_coef * t_lo, self.mean_coef * t_hi)
        pad = self.channel.tail_radius * (self.channel.scale + math.sqrt(self.smooth_var))
        return min(mus) - pad, max(mus) + pad


def effective_true(y, t, order: OrderParams, model: ChannelModel, urule=None):
    """Smoothed true channel density at input mean sqrt(beta*m^2/q)*t."""
    eff = EffectiveChannel(model.true_channel, _signal_coef(order, model.beta),
                           _true_smooth_var(order, model.beta), urule)
    return eff.density(y, t)


def effective_post(y, t, order: OrderParams, model: ChannelModel, deriv: int = 0, urule=None):
    """Smoothed postulated channel (and input-mean derivatives) at mean sqrt(beta*q)*t."""
    eff = EffectiveChannel(model.post_channel, math.sqrt(model.beta * max(order.q, 0.0)),
                           _post_smooth_var(order, model.beta), urule)
    return eff.density(y, t, deriv)


def _effective_pair(order: OrderParams, model: ChannelModel, opts: QuadOptions):
    urule = quad.hermite_rule(opts.hermite_u)
    eff0 = EffectiveChannel(model.true_channel, _signal_coef(order, model.beta),
                            _true_smooth_var(order, model.beta), urule)
    eff = EffectiveChannel(model.post_channel, math.sqrt(model.beta * max(order.q, 0.0)),
                           _post_smooth_var(order, model.beta), urule)
    return eff0, eff


# ---------------------------------------------------------------------------
# Conjugates from order parameters (the three (t, y) double integrals)
# ---------------------------------------------------------------------------

def _both_gaussian(model: ChannelModel) -> bool:
    return isinstance(model.true_channel, GaussianChannel) and \
        isinstance(model.post_channel, GaussianChannel)


def gaussian_conjugates(order: OrderParams, model: ChannelModel):
    """Closed forms when both channels are linear-Gaussian.

    With s = sigma^2 + beta*(r-q), s0 = sigma0^2 + beta*(r0 - m^2/q) and
    delta the gap between the two input-mean coefficients:
    G = (s0 + delta^2 - s)/s^2, E = 1/s, F = (s0 + delta^2)/s^2.
    """
    beta = model.beta
    s = model.post_channel.sigma2 + _post_smooth_var(order, beta)
    s0 = model.true_channel.sigma2 + _true_smooth_var(order, beta)
    delta = _signal_coef(order, beta) - math.sqrt(beta * max(order.q, 0.0))
    G = (s0 + delta ** 2 - s) / s ** 2
    E = 1.0 / s
    F = (s0 + delta ** 2) / s ** 2
    return G, E, F


def conjugates_from_orders(order: OrderParams, model: ChannelModel,
                           opts: QuadOptions | None = None) -> ConjugateParams:
    """Evaluate the three conjugate integrals at the given order parameters."""
    opts = opts or QuadOptions()
    if _both_gaussian(model) and not opts.force_quadrature:
        G, E, F = gaussian_conjugates(order, model)
    else:
        trule = quad.hermite_rule(opts.hermite_t)
        eff0, eff = _effective_pair(order, model, opts)
        G = E = F = 0.0
        for tnode, tw in zip(trule.nodes, trule.weights):
            lo0, hi0 = eff0.y_domain(tnode, tnode)
            lo1, hi1 = eff.y_domain(tnode, tnode)
            lo, hi = min(lo0, lo1), max(hi0, hi1)

            def integrand(y):
                p0 = eff0.density(y, tnode)
                p0d = eff0.density(y, tnode, 1)
                p = np.clip(eff.density(y, tnode), _TINY, None)
                ratio = eff.density(y, tnode, 1) / p
                curv = eff.density(y, tnode, 2) / p
                return np.stack([p0 * curv, p0d * ratio, p0 * ratio * ratio])

            vals = quad.integrate_y(integrand, lo, hi, tol=opts.y_tol).value
            G += tw * vals[0]
            E += tw * vals[1]
            F += tw * vals[2]
    return ConjugateParams(G=G, E=max(E, 1e-12), F=max(F, 1e-12), G0=0.0)


# ---------------------------------------------------------------------------
# Order parameters from conjugates (scalar posterior moments)
# ---------------------------------------------------------------------------

def scalar_posterior_stats(z, conj: ConjugateParams, prior):
    """Posterior mean and second moment of x given decoupled output z.

    The posterior density is proportional to
    rho_G(z|x) * exp(((G - F + E)/2) x^2) * P(x), which reduces to the prior
    tilted by exp(((G - F)/2) x^2 + E z x).  Vectorized over z.
    """
    _, mean, m2 = prior.tilted_moments(conj.E * np.asarray(z, dtype=float),
                                       0.5 * (conj.G - conj.F))
    return mean, m2


def orders_from_conjugates(conj: ConjugateParams, model: ChannelModel,
                           opts: QuadOptions | None = None):
    """(r, m, q) as expectations over x0 ~ true prior, z = x0 + N(0, F/E^2).

    Gaussian mixture components of the true prior integrate in one dimension:
    for a component of variance v the pair (x0, z) is jointly Gaussian, so
    E[x0 * f(z)] = E[E[x0|z] f(z)] with the usual shrinkage factor.
    """
    opts = opts or QuadOptions()
    conj.validate()
    post = iid_part(model.post_prior)
    sd2 = conj.F / conj.E ** 2

    def stats(z):
        mean, m2 = scalar_posterior_stats(z, conj, post)
        return mean, m2

    r = m = q = 0.0
    for (w, mu, v) in iid_part(model.true_prior).gaussian_components():
        if w <= 0.0:
            continue
        var_z = sd2 + v
        shrink = v / var_z

        def f(z):
            mean, m2 = stats(z)
            x0_given_z = mu + shrink * (z - mu)
            return np.stack([x0_given_z * mean, mean * mean, m2])

        vals = quad.gauss_expectation(f, mu, math.sqrt(var_z), tol=opts.z_tol)
        m += w * vals[0]
        q += w * vals[1]
        r += w * vals[2]
    return float(r), float(m), float(q)


# ---------------------------------------------------------------------------
# Free energy
# ---------------------------------------------------------------------------

def _channel_cross_entropy(order: OrderParams, model: ChannelModel, opts: QuadOptions) -> float:
    """(1/beta) * E_t int rho0bar(y|.) log rhobar(y|.) dy."""
    beta = model.beta
    if _both_gaussian(model) and not opts.force_quadrature:
        s = model.post_channel.sigma2 + _post_smooth_var(order, beta)
        s0 = model.true_channel.sigma2 + _true_smooth_var(order, beta)
        delta = _signal_coef(order, beta) - math.sqrt(beta * max(order.q, 0.0))
        return (-0.5 * math.log(2.0 * math.pi * s) - (s0 + delta ** 2) / (2.0 * s)) / beta
    trule = quad.hermite_rule(opts.hermite_t)
    eff0, eff = _effective_pair(order, model, opts)
    total = 0.0
    for tnode, tw in zip(trule.nodes, trule.weights):
        lo0, hi0 = eff0.y_domain(tnode, tnode)
        lo1, hi1 = eff.y_domain(tnode, tnode)
        lo, hi = min(lo0, lo1), max(hi0, hi1)

        def integrand(y):
            p0 = eff0.density(y, tnode)
            logp = np.log(np.clip(eff.density(y, tnode), _TINY, None))
            return p0 * logp

        total += tw * quad.integrate_y(integrand, lo, hi, tol=opts.y_tol).value
    return total / beta


def log_modulation_normalizer(conj: ConjugateParams, post_prior) -> float:
    """log of int exp(((G-F+E)/2) x^2) P(x) dx for a single component."""
    gamma = 0.5 * (conj.G - conj.F + conj.E)
    logz, _, _ = iid_part(post_prior).tilted_moments(0.0, gamma)
    return float(logz)


def _scalar_partition_expectation(conj: ConjugateParams, model: ChannelModel,
                                  opts: QuadOptions) -> float:
    """E over (x0, z) of log int rho_G(z|x) exp(gamma x^2) P(x) dx (unnormalized tilt)."""
    E = conj.E
    c = 0.5 * (conj.G - conj.F)
    post = iid_part(model.post_prior)
    const = 0.5 * math.log(E / (2.0 * math.pi))
    sd2 = conj.F / E ** 2

    def log_partition(z):
        logz, _, _ = post.tilted_moments(E * z, c)
        return const - 0.5 * E * z * z + logz

    total = 0.0
    for (w, mu, v) in iid_part(model.true_prior).gaussian_components():
        if w <= 0.0:
            continue
        total += w * quad.gauss_expectation(log_partition, mu, math.sqrt(sd2 + v),
                                            tol=opts.z_tol)
    return total


def free_energy_terms(order: OrderParams, conj: ConjugateParams, model: ChannelModel,
                      opts: QuadOptions | None = None) -> dict:
    """All named pieces of the selection functional, plus the stationary variant.

    The selection functional is evaluated term by term exactly as printed in
    the source description.  A finite-difference check shows it is generally
    NOT stationary at fixed points; the `stationary` variant fixes that by
    flipping the sign of the G*r coupling (equivalently subtracting G*r) and
    by using the unnormalized quadratic modulation (adding back the
    log-normalizer).  Both agree in value at matched solutions, where G = 0
    and the modulation exponent vanishes.  Selection between coexisting
    solutions uses the printed form; the solver reports the discrepancy
    rather than silently repairing the formula.
    """
    opts = opts or QuadOptions()
    if conj.E <= 0 or conj.F <= 0:
        raise ValueError("free energy needs E > 0 and F > 0")
    t1 = _channel_cross_entropy(order, model, opts)
    coupling = 0.5 * conj.G * order.r - conj.E * order.m + 0.5 * conj.F * order.q
    closure = conj.F / (2.0 * conj.E) + 0.5 * conj.E * order.r0 \
        - 0.5 * math.log(conj.E / (2.0 * math.pi))
    partition = _scalar_partition_expectation(conj, model, opts)
    log_norm = log_modulation_normalizer(conj, model.post_prior)
    value = t1 + coupling + closure + partition - log_norm
    stationary = value - conj.G * order.r + log_norm
    return {
        "channel_cross_entropy": t1,
        "coupling": coupling,
        "closure": closure,
        "scalar_partition": partition,
        "log_modulation_normalizer": log_norm,
        "value": value,
        "stationary_value": stationary,
    }


def free_energy(order: OrderParams, conj: ConjugateParams, model: ChannelModel,
                opts: QuadOptions | None = None) -> float:
    """The selection functional (used to pick among coexisting fixed points)."""
    return free_energy_terms(order, conj, model, opts)["value"]


def free_energy_stationary(order: OrderParams, conj: ConjugateParams, model: ChannelModel,
                           opts: QuadOptions | None = None) -> float:
    """Variant whose gradient vanishes at fixed points (diagnostic)."""
    return free_energy_terms(order, conj, model, opts)["stationary_value"]


_PARAM_NAMES = ("r", "m", "q", "G", "E", "F")


def _fd_steps(order: OrderParams, conj: ConjugateParams, rel_step: float) -> np.ndarray:
    """Per-parameter step sizes that stay inside the feasible region.

    Solutions can sit within ~1e-6 of the m^2 = r0*q or q = r boundaries,
    where the smoothing-variance clamps kink the functional; steps shrink to
    a quarter of the remaining distance so central differences never cross.
    """
    base = rel_step * np.maximum(1.0, np.abs([order.r, order.m, order.q,
                                              conj.G, conj.E, conj.F]))
    mcap = math.sqrt(max(order.r0 * order.q, 0.0))
    dist = np.array([
        order.r - order.q,
        mcap - abs(order.m),
        min(order.r - order.q, order.q - order.m ** 2 / order.r0),
        np.inf,
        conj.E,
        conj.F,
    ])
    return np.maximum(np.minimum(base, dist / 4.0), 1e-8)


def stationarity_report(order: OrderParams, conj: ConjugateParams, model: ChannelModel,
                        opts: QuadOptions | None = None, rel_step: float = 1e-6) -> dict:
    """Finite-difference gradient of both free-energy variants at a point.

    At a converged fixed point the stationary variant's gradient should be
    at noise level; a large gradient of the selection form is expected and
    reported per parameter so the discrepancy is visible, not repaired.
    """
    opts = opts or QuadOptions()

    def pack(vec):
        o = OrderParams(r0=order.r0, r=vec[0], m=vec[1], q=vec[2])
        c = ConjugateParams(G=vec[3], E=vec[4], F=vec[5], G0=conj.G0)
        return o, c

    x0 = np.array([order.r, order.m, order.q, conj.G, conj.E, conj.F])
    steps = _fd_steps(order, conj, rel_step)
    grad_sel = np.zeros(6)
    grad_sta = np.zeros(6)
    for i in range(6):
        h = steps[i]
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        tp = free_energy_terms(*pack(xp), model, opts)
        tm = free_energy_terms(*pack(xm), model, opts)
        grad_sel[i] = (tp["value"] - tm["value"]) / (2.0 * h)
        grad_sta[i] = (tp["stationary_value"] - tm["stationary_value"]) / (2.0 * h)
    return {
        "gradient_selection": dict(zip(_PARAM_NAMES, grad_sel.tolist())),
        "norm_selection": float(np.linalg.norm(grad_sel)),
        "gradient_stationary": dict(zip(_PARAM_NAMES, grad_sta.tolist())),
        "norm_stationary": float(np.linalg.norm(grad_sta)),
        "note": ("stationary variant = selection - G*r + log modulation normalizer; "
                 "a non-vanishing selection gradient with vanishing stationary "
                 "gradient localizes the printed formula's sign/normalization slip"),
    }


# ---------------------------------------------------------------------------
# Fixed-point solver
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    points: list
    selected: int
    tie: bool
    traces: dict

    @property
    def selected_point(self) -> FixedPoint:
        return self.points[self.selected]


def _project(r0, r, m, q, q_floor):
    q = min(max(q, q_floor), max(r, q_floor))
    mcap = math.sqrt(r0 * q * (1.0 + 1e-12))
    m = min(max(m, -mcap), mcap)
    return r, m, q


def _initial_orders(label, r0, options):
    if label == "informed":
        return r0, 0.9 * r0, 0.9 * r0
    if label == "uninformed":
        return r0, 0.0, options.q_seed
    raise ValueError(f"unknown initialization label {label!r}")


def _iterate(model, start, options):
    r0 = model.r0
    r, m, q = _project(r0, *start, options.q_floor)
    alpha = options.damping
    residuals = []
    conj = None
    for it in range(1, options.max_iterations + 1):
        order = OrderParams(r0=r0, r=r, m=m, q=q)
        conj = conjugates_from_orders(order, model, options.quad)
        rn, mn, qn = orders_from_conjugates(conj, model, options.quad)
        res = max(abs(rn - r), abs(mn - m), abs(qn - q))
        residuals.append(res)
        if res < options.tolerance:
            return FixedPoint(order=order, conj=conj, free_energy=math.nan,
                              residual=res, iterations=it, converged=True,
                              init_labels=()), residuals
        if len(residuals) > 1 and res > residuals[-2] * (1.0 + 1e-12):
            alpha = max(0.5 * alpha, options.damping_floor)
        r, m, q = _project(r0,
                           (1.0 - alpha) * r + alpha * rn,
                           (1.0 - alpha) * m + alpha * mn,
                           (1.0 - alpha) * q + alpha * qn,
                           options.q_floor)
    return None, residuals


def solve_fixed_points(model: ChannelModel, options: SolverOptions | None = None,
                       user_inits=()) -> SolveResult:
    """Damped alternating iteration from each initialization; dedup, select.

    Returns all distinct converged fixed points with the minimum-free-energy
    one selected (informed start wins free-energy ties, flagged).  Raises
    ConvergenceError with the residual traces when nothing converges.
    """
    options = options or SolverOptions()
    r0 = model.r0
    starts = [(label, _initial_orders(label, r0, options))
              for label in options.initializations]
    for j, init in enumerate(user_inits):
        starts.append((f"user{j}", (init["r"], init["m"], init["q"])))

    traces = {}
    found = []
    for label, start in starts:
        fp, trace = _iterate(model, start, options)
        traces[label] = trace
        if fp is not None:
            found.append(replace(fp, init_labels=(label,)))

    if not found:
        raise ConvergenceError(
            "no initialization converged within "
            f"{options.max_iterations} iterations "
            f"(final residuals: {({k: v[-1] for k, v in traces.items()})})",
            traces=traces)

    # merge points that agree to within the distinctness tolerance
    distinct = []
    for fp in found:
        vec = np.array([fp.order.r, fp.order.m, fp.order.q,
                        fp.conj.G, fp.conj.E, fp.conj.F])
        for i, other in enumerate(distinct):
            ovec = np.array([other.order.r, other.order.m, other.order.q,
                             other.conj.G, other.conj.E, other.conj.F])
            if np.max(np.abs(vec - ovec)) <= options.distinct_tol:
                distinct[i] = replace(other, init_labels=other.init_labels + fp.init_labels)
                break
        else:
            distinct.append(fp)

    scored = [replace(fp, free_energy=free_energy(fp.order, fp.conj, model, options.quad))
              for fp in distinct]

    def rank(fp):
        informed = 0 if "informed" in fp.init_labels else 1
        return (fp.free_energy, informed)

    scored.sort(key=rank)
    tie = len(scored) > 1 and abs(scored[0].free_energy - scored[1].free_energy) < options.tie_tol
    if tie and "informed" not in scored[0].init_labels and "informed" in scored[1].init_labels:
        scored[0], scored[1] = scored[1], scored[0]
    return SolveResult(points=scored, selected=0, tie=tie, traces=traces)
