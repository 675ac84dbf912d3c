"""Priors and memoryless scalar channels for the true and postulated models.

Every object here is immutable after construction and safe to share across
parallel workers; samplers take an explicit per-worker rng.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ModulationError

_EPS = np.finfo(float).eps
_D1_STEP = _EPS ** (1.0 / 3.0)
# For the second-difference stencil the cube-root step drowns in roundoff
# (error ~ 4*eps/h^2 ~ 1e-5); the quarter-root step keeps both error terms
# below the 1e-6 agreement contract.
_D2_STEP = _EPS ** 0.25
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_TINY = 1e-300


def _check_finite(**values):
    for name, v in values.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite value for '{name}': {v!r}")


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

class ScalarChannel:
    """Conditional output density rho(y|u), differentiable in the input mean u.

    Subclasses provide `density`; derivative handles fall back to centered
    finite differences (step h1 = eps^(1/3)*max(1,|u|) for the first
    derivative, h2 = eps^(1/4)*max(1,|u|) for the second).  `order` declares
    how many u-derivatives exist; `scale` and `tail_radius` describe the
    output support used for domain truncation: y in
    [u_min - tail_radius*scale, u_max + tail_radius*scale].
    """

    kind = "custom"
    order = 2
    scale = 1.0
    tail_radius = 10.0

    def density(self, y, u):
        raise NotImplementedError

    def log_density(self, y, u):
        return np.log(np.clip(self.density(y, u), _TINY, None))

    def d1(self, y, u):
        h = _D1_STEP * np.maximum(1.0, np.abs(u))
        return (self.density(y, u + h) - self.density(y, u - h)) / (2.0 * h)

    def d2(self, y, u):
        h = _D2_STEP * np.maximum(1.0, np.abs(u))
        return (self.density(y, u + h) - 2.0 * self.density(y, u) + self.density(y, u - h)) / (h * h)

    def sample(self, u, rng):
        raise CapabilityError(f"channel kind '{self.kind}' has no sampler")

    def params(self):
        return {}


class GaussianChannel(ScalarChannel):
    """y = u + noise with noise ~ N(0, sigma2). Analytic derivatives."""

    kind = "gaussian"
    order = 2

    def __init__(self, sigma2: float, tail_radius: float = 10.0):
        sigma2 = float(sigma2)
        if not sigma2 > 0.0:
            raise ValueError(f"gaussian channel needs sigma2 > 0, got {sigma2}")
        self.sigma2 = sigma2
        self.scale = math.sqrt(sigma2)
        self.tail_radius = float(tail_radius)

    def density(self, y, u):
        d = np.asarray(y, dtype=float) - u
        return np.exp(-0.5 * d * d / self.sigma2) / (self.scale * _SQRT_2PI)

    def log_density(self, y, u):
        d = np.asarray(y, dtype=float) - u
        return -0.5 * d * d / self.sigma2 - math.log(self.scale * _SQRT_2PI)

    def d1(self, y, u):
        d = np.asarray(y, dtype=float) - u
        return d / self.sigma2 * self.density(y, u)

    def d2(self, y, u):
        d = np.asarray(y, dtype=float) - u
        return (d * d - self.sigma2) / self.sigma2 ** 2 * self.density(y, u)

    def sample(self, u, rng):
        u = np.asarray(u, dtype=float)
        return u + self.scale * rng.standard_normal(u.shape)

    def params(self):
        return {"sigma2": self.sigma2}

    def __eq__(self, other):
        return isinstance(other, GaussianChannel) and other.sigma2 == self.sigma2

    def __hash__(self):
        return hash(("gaussian", self.sigma2))


class CustomChannel(ScalarChannel):
    """User-defined channel through density / derivative / sampler handles."""

    kind = "custom"

    def __init__(self, density, d1=None, d2=None, log_density=None, sampler=None,
                 order: int = 2, scale: float = 1.0, tail_radius: float = 10.0):
        self._density = density
        self._d1 = d1
        self._d2 = d2
        self._log_density = log_density
        self._sampler = sampler
        self.order = int(order)
        self.scale = float(scale)
        self.tail_radius = float(tail_radius)

    def density(self, y, u):
        return np.asarray(self._density(y, u), dtype=float)

    def log_density(self, y, u):
        if self._log_density is not None:
            return np.asarray(self._log_density(y, u), dtype=float)
        return super().log_density(y, u)

    def d1(self, y, u):
        if self._d1 is not None:
            return np.asarray(self._d1(y, u), dtype=float)
        return super().d1(y, u)

    def d2(self, y, u):
        if self._d2 is not None:
            return np.asarray(self._d2(y, u), dtype=float)
        return super().d2(y, u)

    def sample(self, u, rng):
        if self._sampler is None:
            raise CapabilityError("custom channel was built without a sampler")
        return np.asarray(self._sampler(u, rng), dtype=float)


def density(channel: ScalarChannel, y, u):
    """rho(y|u) with input validation."""
    _check_finite(y=y, u=u)
    return channel.density(y, u)


def density_d1(channel: ScalarChannel, y, u):
    """d/du rho(y|u); finite-difference fallback when no analytic handle exists."""
    _check_finite(y=y, u=u)
    if channel.order < 1:
        raise CapabilityError("channel is not differentiable in u")
    return channel.d1(y, u)


def density_d2(channel: ScalarChannel, y, u):
    """d^2/du^2 rho(y|u)."""
    _check_finite(y=y, u=u)
    if channel.order < 2:
        raise CapabilityError("channel is declared once-differentiable; no second derivative")
    return channel.d2(y, u)


def finite_difference_d1(channel: ScalarChannel, y, u):
    """Stencil first derivative, for cross-checking analytic handles."""
    return ScalarChannel.d1(channel, y, np.asarray(u, dtype=float))


def finite_difference_d2(channel: ScalarChannel, y, u):
    return ScalarChannel.d2(channel, y, np.asarray(u, dtype=float))


def sample_output(channel: ScalarChannel, u, rng) -> float:
    """Draw y ~ rho(.|u)."""
    _check_finite(u=u)
    return channel.sample(u, rng)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prior:
    """Factorized (i.i.d. per component) input prior.

    Supported kinds: discrete atom lists (bpsk being the common case), a
    centered Gaussian, and a Bernoulli-Gaussian spike-and-slab mixture.
    The quadratic-tilt moments method is the single primitive every scalar
    posterior computation reduces to.
    """

    kind: str
    variance: float = 1.0
    sparsity: float = 1.0
    atoms: tuple = ()
    atom_probs: tuple = ()

    @property
    def is_discrete(self) -> bool:
        return len(self.atoms) > 0

    @property
    def second_moment(self) -> float:
        """Per-component second moment (the large-system r0)."""
        if self.is_discrete:
            a = np.asarray(self.atoms)
            p = np.asarray(self.atom_probs)
            return float(np.sum(p * a * a))
        if self.kind == "gaussian":
            return self.variance
        if self.kind == "bernoulli_gaussian":
            return self.sparsity * self.variance
        raise CapabilityError(f"unknown prior kind {self.kind!r}")

    def sample(self, n: int, rng) -> np.ndarray:
        if self.is_discrete:
            idx = rng.choice(len(self.atoms), size=n, p=np.asarray(self.atom_probs))
            return np.asarray(self.atoms, dtype=float)[idx]
        if self.kind == "gaussian":
            return math.sqrt(self.variance) * rng.standard_normal(n)
        if self.kind == "bernoulli_gaussian":
            on = rng.random(n) < self.sparsity
            x = np.zeros(n)
            x[on] = math.sqrt(self.variance) * rng.standard_normal(int(on.sum()))
            return x
        raise CapabilityError(f"unknown prior kind {self.kind!r}")

    def tilted_moments(self, b, c: float):
        """Moments of the tilted measure  dmu(x) ∝ exp(c*x^2 + b*x) dP(x).

        b may be an array (vectorized over an output grid); c is scalar.
        Returns (log_normalizer, mean, second_moment) with b's shape.
        Raises ModulationError when the tilt defeats the prior tails.
        """
        b = np.asarray(b, dtype=float)
        if self.is_discrete:
            a = np.asarray(self.atoms, dtype=float)
            logits = np.log(np.asarray(self.atom_probs, dtype=float)) + c * a * a \
                + b[..., None] * a
            peak = logits.max(axis=-1, keepdims=True)
            w = np.exp(logits - peak)
            z = w.sum(axis=-1)
            mean = (w * a).sum(axis=-1) / z
            m2 = (w * a * a).sum(axis=-1) / z
            return np.log(z) + peak[..., 0], mean, m2
        if self.kind == "gaussian":
            lam = 1.0 / self.variance - 2.0 * c
            if lam <= 0.0:
                raise ModulationError(
                    f"quadratic tilt {c:g} is not integrable against a gaussian "
                    f"prior of variance {self.variance:g}")
            mean = b / lam
            m2 = 1.0 / lam + mean * mean
            logz = -0.5 * math.log(self.variance * lam) + 0.5 * b * b / lam
            return logz, mean, m2
        if self.kind == "bernoulli_gaussian":
            lam = 1.0 / self.variance - 2.0 * c
            if lam <= 0.0:
                raise ModulationError(
                    f"quadratic tilt {c:g} is not integrable against the gaussian "
                    f"component of variance {self.variance:g}")
            # spike at 0 carries weight (1-sparsity), tilt leaves it unchanged
            log_w0 = np.full(b.shape, math.log(max(1.0 - self.sparsity, _TINY)))
            log_w1 = math.log(max(self.sparsity, _TINY)) \
                - 0.5 * math.log(self.variance * lam) + 0.5 * b * b / lam
            peak = np.maximum(log_w0, log_w1)
            w0 = np.exp(log_w0 - peak)
            w1 = np.exp(log_w1 - peak)
            z = w0 + w1
            mean_g = b / lam
            mean = w1 * mean_g / z
            m2 = w1 * (1.0 / lam + mean_g * mean_g) / z
            return np.log(z) + peak, mean, m2
        raise CapabilityError(f"unknown prior kind {self.kind!r}")

    def gaussian_components(self):
        """Mixture view for true-side expectations: list of (weight, mean, var).

        Atoms are zero-variance components.  Used when pushing the prior
        through the decoupled noisy channel.
        """
        if self.is_discrete:
            return [(float(p), float(a), 0.0)
                    for a, p in zip(self.atoms, self.atom_probs)]
        if self.kind == "gaussian":
            return [(1.0, 0.0, self.variance)]
        if self.kind == "bernoulli_gaussian":
            return [(1.0 - self.sparsity, 0.0, 0.0), (self.sparsity, 0.0, self.variance)]
        raise CapabilityError(f"unknown prior kind {self.kind!r}")

    def spec(self):
        if self.is_discrete:
            return {"kind": self.kind, "atoms": list(self.atoms), "probs": list(self.atom_probs)}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "variance": self.variance}
        return {"kind": "bernoulli_gaussian", "sparsity": self.sparsity,
                "variance": self.variance}


def bpsk() -> Prior:
    return Prior(kind="bpsk", atoms=(-1.0, 1.0), atom_probs=(0.5, 0.5))


def gaussian_prior(variance: float = 1.0) -> Prior:
    if not variance > 0:
        raise ValueError("gaussian prior needs variance > 0")
    return Prior(kind="gaussian", variance=float(variance))


def bernoulli_gaussian(sparsity: float, variance: float = 1.0) -> Prior:
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must lie in (0, 1]")
    if not variance > 0:
        raise ValueError("variance must be positive")
    return Prior(kind="bernoulli_gaussian", sparsity=float(sparsity), variance=float(variance))


def discrete_prior(atoms, probs) -> Prior:
    atoms = tuple(float(a) for a in atoms)
    probs = tuple(float(p) for p in probs)
    if len(atoms) != len(probs) or not atoms:
        raise ValueError("atoms and probs must be equal-length and non-empty")
    total = sum(probs)
    if abs(total - 1.0) > 1e-10 or min(probs) < 0:
        raise ValueError(f"atom probabilities must be a distribution, sum={total}")
    return Prior(kind="discrete", atoms=atoms, atom_probs=probs)


@dataclass(frozen=True)
class BlockPrior:
    """Joint table over the first L components, i.i.d. remainder.

    The large-system second moment is the remainder's; the block only shapes
    the finitely many components whose joint law is under study.
    """

    atoms: tuple
    table: np.ndarray = field(compare=False)
    rest: Prior

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim < 1 or any(s != len(self.atoms) for s in t.shape):
            raise ValueError("table must be an L-dim array over the atom support")
        if abs(t.sum() - 1.0) > 1e-10 or t.min() < 0:
            raise ValueError(f"block table must be a distribution, sum={t.sum()}")
        object.__setattr__(self, "table", t)

    @property
    def L(self) -> int:
        return self.table.ndim

    @property
    def second_moment(self) -> float:
        return self.rest.second_moment

    def sample(self, K: int, rng) -> np.ndarray:
        if K < self.L:
            raise ValueError(f"K={K} smaller than block length {self.L}")
        flat = self.table.reshape(-1)
        j = rng.choice(flat.size, p=flat)
        idx = np.unravel_index(j, self.table.shape)
        a = np.asarray(self.atoms, dtype=float)
        head = a[list(idx)]
        return np.concatenate([head, self.rest.sample(K - self.L, rng)])

    def log_mass_head(self, digits: np.ndarray) -> np.ndarray:
        """Log table mass for atom-index rows of shape (n, L)."""
        t = np.clip(self.table, _TINY, None)
        return np.log(t[tuple(digits[:, k] for k in range(self.L))])


def prior_second_moment(prior) -> float:
    """Per-component second moment r0 (block priors: the i.i.d. limit value)."""
    return prior.second_moment


def sample_prior(prior, K: int, rng) -> np.ndarray:
    """Draw a K-vector from the prior."""
    if isinstance(prior, BlockPrior):
        return prior.sample(K, rng)
    return prior.sample(K, rng)


def iid_part(prior) -> Prior:
    """The i.i.d. per-component law governing the bulk of the input vector."""
    return prior.rest if isinstance(prior, BlockPrior) else prior


# ---------------------------------------------------------------------------
# System shape and the full model pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemShape:
    """K inputs, N outputs, load beta = K/N."""

    K: int
    N: int

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ValueError(f"shape needs K >= 1 and N >= 1, got K={self.K}, N={self.N}")

    @property
    def beta(self) -> float:
        return self.K / self.N


@dataclass(frozen=True)
class ChannelModel:
    """True and postulated (prior, channel) pairs plus the load beta."""

    true_prior: object
    true_channel: ScalarChannel
    post_prior: object
    post_channel: ScalarChannel
    beta: float

    @property
    def matched(self) -> bool:
        return self.true_prior == self.post_prior and self.true_channel == self.post_channel

    @property
    def r0(self) -> float:
        return prior_second_moment(self.true_prior)


def matched_model(prior, channel, beta: float) -> ChannelModel:
    return ChannelModel(true_prior=prior, true_channel=channel,
                        post_prior=prior, post_channel=channel, beta=float(beta))
