"""Finite-size ground truth for the linear vector channel.

Simulates y ~ prod rho0(y_mu | h_mu^T x0 / sqrt(N)) with i.i.d. random
matrices and produces exact (enumeration), conjugate (gaussian), or MCMC
(Gibbs) posterior samples and posterior means, collected into per-trial
records of (x0^L, posterior sample x^L, posterior mean x^L).

Determinism contract: every trial derives its generator from
(master_seed, trial_index), so a SampleSet is bit-identical for any worker
count.  Reductions avoid BLAS so results do not depend on the linear-algebra
threading configuration.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError
from .model import (BlockPrior, ChannelModel, GaussianChannel, Prior,
                    SystemShape, iid_part, sample_prior)

_LOG_TINY = -745.0


@dataclass(frozen=True)
class MatrixEnsemble:
    """i.i.d. channel-matrix entries: mean 0, variance 1, odd moments 0.

    The gaussian ensemble (fourth moment kappa = 3) annihilates the leading
    finite-size correction of the matrix average, so it is the default for
    decoupling tests; rademacher (kappa = 1) probes universality.
    """

    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown ensemble {self.kind!r}")

    @property
    def kappa(self) -> float:
        return 3.0 if self.kind == "gaussian" else 1.0

    def sample(self, N: int, K: int, rng) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal((N, K))
        return (2.0 * rng.integers(0, 2, size=(N, K)) - 1.0).astype(float)


def sample_system(shape: SystemShape, ensemble: MatrixEnsemble, prior, channel, rng):
    """One channel realization: (H, x0, y) with y_mu ~ rho0(.| h_mu^T x0 / sqrt(N))."""
    H = ensemble.sample(shape.N, shape.K, rng)
    x0 = sample_prior(prior, shape.K, rng)
    u = (H * x0[None, :]).sum(axis=1) / math.sqrt(shape.N)
    y = channel.sample(u, rng)
    return H, x0, y


# ---------------------------------------------------------------------------
# Exact enumeration over discrete supports (Gray-code order)
# ---------------------------------------------------------------------------

MAX_ENUM_K = 20


@dataclass(frozen=True)
class GrayTables:
    """Static reflected (mixed-radix) Gray enumeration tables for atoms^K.

    Component 0 cycles fastest; consecutive configurations differ in exactly
    one component by one atom step, which makes the running transform Hx a
    cumulative sum of rank-one updates (O(N) work per configuration).
    """

    atoms: np.ndarray
    K: int
    digits: np.ndarray       # (M, K) int8 atom indices
    flip_pos: np.ndarray     # (M-1,) changed component per step
    flip_delta: np.ndarray   # (M-1,) value change at that component
    positional_id: np.ndarray  # (M,) mixed-radix id of each row

    @property
    def M(self) -> int:
        return self.digits.shape[0]


def gray_tables(atoms, K: int) -> GrayTables:
    atoms = np.asarray(atoms, dtype=float)
    A = atoms.size
    if K > MAX_ENUM_K:
        raise CapabilityError(f"enumeration supports K <= {MAX_ENUM_K}, got {K}")
    M = A ** K
    i = np.arange(M)
    digits = np.empty((M, K), dtype=np.int8)
    for k in range(K):
        s = (i // A ** k) % A
        parity = (i // A ** (k + 1)) % 2
        digits[:, k] = np.where(parity == 0, s, A - 1 - s)
    step = np.diff(digits.astype(np.int16), axis=0)
    flip_pos = np.abs(step).argmax(axis=1)
    rows = np.arange(M - 1)
    new = digits[1:][rows, flip_pos]
    old = digits[:-1][rows, flip_pos]
    flip_delta = atoms[new] - atoms[old]
    positional_id = (digits.astype(np.int64) * (A ** np.arange(K, dtype=np.int64))).sum(axis=1)
    return GrayTables(atoms=atoms, K=K, digits=digits, flip_pos=flip_pos,
                      flip_delta=flip_delta, positional_id=positional_id)


def _prior_atoms(prior):
    p = iid_part(prior)
    if not p.is_discrete:
        raise CapabilityError("exact enumeration needs a discrete prior")
    return np.asarray(p.atoms, dtype=float), np.asarray(p.atom_probs, dtype=float)


def _log_prior_per_config(prior, gt: GrayTables) -> np.ndarray | float:
    _, probs = _prior_atoms(prior)
    logp = np.log(np.clip(probs, 1e-300, None))
    if isinstance(prior, BlockPrior):
        head = prior.log_mass_head(gt.digits[:, :prior.L])
        tail = logp[gt.digits[:, prior.L:]].sum(axis=1)
        return head + tail
    if np.allclose(logp, logp[0]):
        return float(gt.K * logp[0])
    return logp[gt.digits].sum(axis=1)


@dataclass
class EnumeratedPosterior:
    """Normalized posterior over all configurations, in Gray order."""

    gray: GrayTables
    probs: np.ndarray
    log_norm: float
    pme: np.ndarray

    def sample(self, n: int, rng) -> np.ndarray:
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n), side="right")
        return self.gray.atoms[self.gray.digits[idx]]

    def positional_probs(self) -> np.ndarray:
        """Probabilities indexed by the mixed-radix configuration id."""
        out = np.zeros_like(self.probs)
        out[self.gray.positional_id] = self.probs
        return out


def enumerate_posterior(y, H, prior, channel, gray: GrayTables | None = None,
                        chunk: int = 1 << 16) -> EnumeratedPosterior:
    """Exact posterior over atoms^K via Gray-code incremental transform updates."""
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    N, K = H.shape
    atoms, _ = _prior_atoms(prior)
    gt = gray if gray is not None else gray_tables(atoms, K)
    if gt.K != K or not np.array_equal(gt.atoms, atoms):
        raise ValueError("gray tables do not match the prior/shape")

    Hs = H / math.sqrt(N) if N > 0 else H
    x_start = atoms[gt.digits[0]]
    u0 = (Hs * x_start[None, :]).sum(axis=1)

    M = gt.M
    loglik = np.empty(M)
    if N == 0:
        loglik[:] = 0.0
    elif isinstance(channel, GaussianChannel) and _HAVE_NUMBA:
        # Quadratic log-likelihoods admit O(K)-per-step incremental updates
        # through the Gram matrix of the scaled columns.
        gram = Hs.T @ Hs
        cy = Hs.T @ y
        w0 = gram @ x_start
        _gray_quadratic_loglik(gt.flip_pos, gt.flip_delta, gram, cy,
                               float(y @ y), float(cy @ x_start),
                               float(x_start @ w0), w0.copy(),
                               0.5 / channel.sigma2, loglik)
        loglik -= 0.5 * N * math.log(2.0 * math.pi * channel.sigma2)
    else:
        HsT = Hs.T.copy()
        carry = u0
        loglik[0] = float(channel.log_density(y, u0).sum())
        pos = 1
        while pos < M:
            end = min(pos + chunk, M)
            deltas = gt.flip_delta[pos - 1:end - 1, None] * HsT[gt.flip_pos[pos - 1:end - 1]]
            u_block = carry[None, :] + np.cumsum(deltas, axis=0)
            loglik[pos:end] = channel.log_density(y[None, :], u_block).sum(axis=1)
            carry = u_block[-1]
            pos = end

    logw = loglik + _log_prior_per_config(prior, gt)
    shift = logw.max()
    w = np.exp(np.maximum(logw - shift, _LOG_TINY))
    total = w.sum()
    probs = w / total
    log_norm = math.log(total) + shift

    pme = np.empty(K)
    A = atoms.size
    for k in range(K):
        mass = np.bincount(gt.digits[:, k], weights=probs, minlength=A)
        pme[k] = float(mass @ atoms)
    return EnumeratedPosterior(gray=gt, probs=probs, log_norm=log_norm, pme=pme)


# ---------------------------------------------------------------------------
# Conjugate gaussian posterior
# ---------------------------------------------------------------------------

def gaussian_posterior(y, H, sigma2: float, prior_variance: float):
    """Mean and covariance of the posterior for gaussian prior and channel.

    Precision I/v + H^T H / (N sigma2); mean solves precision*mean =
    H^T y / (sqrt(N) sigma2).
    """
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    N, K = H.shape
    prec = np.eye(K) / prior_variance
    rhs = np.zeros(K)
    if N > 0:
        Hs = H / math.sqrt(N)
        prec = prec + Hs.T @ Hs / sigma2
        rhs = Hs.T @ y / sigma2
    cov = np.linalg.inv(prec)
    mean = cov @ rhs
    return mean, cov


# ---------------------------------------------------------------------------
# Gibbs sampling
# ---------------------------------------------------------------------------

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, nogil=True)
def _gray_quadratic_loglik(flip_pos, flip_delta, gram, cy, yy, s1, s2, w,
                           half_inv_sigma2, out):
    """Gaussian-channel log-likelihoods along the Gray path.

    Maintains s1 = y.u and s2 = |u|^2 (u the scaled transform of the current
    configuration) plus w = Gram @ x, each updated in O(K) per step:
    -2*sigma2*loglik = |y|^2 - 2*s1 + s2 up to the normalization constant.
    """
    M = out.shape[0]
    K = gram.shape[0]
    out[0] = -half_inv_sigma2 * (yy - 2.0 * s1 + s2)
    for j in range(1, M):
        k = flip_pos[j - 1]
        d = flip_delta[j - 1]
        s1 += d * cy[k]
        s2 += 2.0 * d * w[k] + d * d * gram[k, k]
        for i in range(K):
            w[i] += d * gram[i, k]
        out[j] = -half_inv_sigma2 * (yy - 2.0 * s1 + s2)


@njit(cache=True, nogil=True)
def _gibbs_gaussian_scan(Hs, y, inv_sigma2, atoms, logp, state, hh, uniforms,
                         burn_in, thin, out):
    """Systematic-scan site updates for a gaussian channel, discrete atoms.

    uniforms has one row per sweep; retained (thinned, post burn-in) states
    are written to `out` as atom indices.
    """
    N, K = Hs.shape
    A = atoms.size
    sweeps = uniforms.shape[0]
    u = np.zeros(N)
    for n in range(N):
        acc = 0.0
        for k in range(K):
            acc += Hs[n, k] * atoms[state[k]]
        u[n] = acc
    logits = np.empty(A)
    kept = 0
    for s in range(sweeps):
        for k in range(K):
            xk = atoms[state[k]]
            rh = 0.0
            for n in range(N):
                rh += (y[n] - u[n]) * Hs[n, k]
            peak = -1e300
            for a in range(A):
                d = atoms[a] - xk
                logits[a] = logp[a] + inv_sigma2 * (d * rh - 0.5 * d * d * hh[k])
                if logits[a] > peak:
                    peak = logits[a]
            total = 0.0
            for a in range(A):
                logits[a] = math.exp(logits[a] - peak)
                total += logits[a]
            target = uniforms[s, k] * total
            acc = 0.0
            new = A - 1
            for a in range(A):
                acc += logits[a]
                if acc >= target:
                    new = a
                    break
            if new != state[k]:
                d = atoms[new] - xk
                for n in range(N):
                    u[n] += d * Hs[n, k]
                state[k] = new
        if s >= burn_in and (s - burn_in) % thin == 0 and kept < out.shape[0]:
            for k in range(K):
                out[kept, k] = state[k]
            kept += 1
    return kept


def _gibbs_generic_scan(Hs, y, channel, atoms, logp, state, uniforms, burn_in,
                        thin, out):
    """Reference python scan for channels without the gaussian fast path."""
    N, K = Hs.shape
    u = Hs @ atoms[state]
    kept = 0
    for s in range(uniforms.shape[0]):
        for k in range(K):
            base = u - Hs[:, k] * atoms[state[k]]
            logits = np.array([
                logp[a] + float(channel.log_density(y, base + Hs[:, k] * atoms[a]).sum())
                for a in range(atoms.size)
            ])
            w = np.exp(logits - logits.max())
            w /= w.sum()
            new = int(np.searchsorted(np.cumsum(w), uniforms[s, k]))
            new = min(new, atoms.size - 1)
            if new != state[k]:
                u = base + Hs[:, k] * atoms[new]
                state[k] = new
        if s >= burn_in and (s - burn_in) % thin == 0 and kept < out.shape[0]:
            out[kept] = state
            kept += 1
    return kept


@dataclass
class GibbsResult:
    samples: np.ndarray      # (n_keep, K) atom values
    final: np.ndarray        # (K,) atom values after the last sweep
    pme_estimate: np.ndarray  # (K,) across retained samples

    def positional_ids(self, gt: GrayTables) -> np.ndarray:
        A = gt.atoms.size
        idx = np.searchsorted(gt.atoms, self.samples)
        radix = A ** np.arange(gt.K, dtype=np.int64)
        return (idx.astype(np.int64) * radix).sum(axis=1)


def gibbs_sample(y, H, prior, channel, sweeps: int, burn_in: int, rng,
                 thin: int = 1) -> GibbsResult:
    """Single-site systematic-scan Gibbs for discrete priors.

    All randomness is pre-drawn from rng, so results are reproducible and
    independent of the jit path taken.
    """
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    N, K = H.shape
    atoms, probs = _prior_atoms(prior)
    if isinstance(prior, BlockPrior):
        raise CapabilityError("gibbs sampling supports factorized priors only")
    logp = np.log(np.clip(probs, 1e-300, None))
    Hs = (H / math.sqrt(N)) if N > 0 else H
    total_sweeps = burn_in + sweeps
    state = rng.integers(0, atoms.size, size=K).astype(np.int64)
    uniforms = rng.random((total_sweeps, K))
    n_keep = (sweeps + thin - 1) // thin
    out = np.zeros((n_keep, K), dtype=np.int64)
    if isinstance(channel, GaussianChannel) and _HAVE_NUMBA:
        hh = (Hs * Hs).sum(axis=0)
        kept = _gibbs_gaussian_scan(np.ascontiguousarray(Hs), y, 1.0 / channel.sigma2,
                                    atoms, logp, state, hh, uniforms, burn_in,
                                    thin, out)
    else:
        kept = _gibbs_generic_scan(Hs, y, channel, atoms, logp, state, uniforms,
                                   burn_in, thin, out)
    samples = atoms[out[:kept]]
    return GibbsResult(samples=samples, final=atoms[state],
                       pme_estimate=samples.mean(axis=0))


# ---------------------------------------------------------------------------
# Joint-sample collection
# ---------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Per-trial records of (x0^L, posterior sample x^L, posterior mean x^L)."""

    shape: SystemShape
    L: int
    x0: np.ndarray
    x: np.ndarray
    pme: np.ndarray
    master_seed: int
    sampler: str
    ensemble: str
    trials: int
    gibbs: dict = field(default_factory=dict)

    def records(self) -> np.ndarray:
        return np.hstack([self.x0, self.x, self.pme])


def _trial_rng(master_seed: int, trial: int):
    return np.random.default_rng(np.random.SeedSequence((master_seed, trial)))


def _check_sampler(model: ChannelModel, shape: SystemShape, sampler: str):
    post = iid_part(model.post_prior)
    if sampler == "enumeration":
        if not post.is_discrete:
            raise CapabilityError("enumeration sampler needs a discrete postulated prior")
        if shape.K > MAX_ENUM_K:
            raise CapabilityError(
                f"enumeration sampler supports K <= {MAX_ENUM_K}, got K={shape.K}")
    elif sampler == "gibbs":
        if not post.is_discrete:
            raise CapabilityError("gibbs sampler needs a discrete postulated prior")
    elif sampler == "gaussian":
        if post.kind != "gaussian" or not isinstance(model.post_channel, GaussianChannel):
            raise CapabilityError("gaussian sampler needs gaussian prior and channel")
    else:
        raise CapabilityError(f"unknown sampler {sampler!r}")


def collect_joint_samples(model: ChannelModel, shape: SystemShape,
                          ensemble: MatrixEnsemble, sampler: str, trials: int,
                          L: int, master_seed: int, threads: int = 1,
                          gibbs_sweeps: int = 100_000, gibbs_burn_in: int = 1000,
                          gibbs_thin: int = 1) -> SampleSet:
    """Independent trials of (fresh H, x0, y) -> one posterior sample + mean.

    A fresh matrix per trial realizes the expectation over the channel
    ensemble; one retained posterior sample per trial keeps records i.i.d.
    """
    if L < 1 or L > shape.K:
        raise ValueError(f"need 1 <= L <= K, got L={L}, K={shape.K}")
    _check_sampler(model, shape, sampler)
    if abs(shape.beta - model.beta) > 1e-12:
        raise ValueError(f"shape load {shape.beta} differs from model beta {model.beta}")

    gt = None
    if sampler in ("enumeration", "gibbs"):
        atoms, _ = _prior_atoms(model.post_prior)
        if sampler == "enumeration":
            gt = gray_tables(atoms, shape.K)

    x0_out = np.empty((trials, L))
    x_out = np.empty((trials, L))
    pme_out = np.empty((trials, L))

    def run_trial(t: int):
        rng = _trial_rng(master_seed, t)
        H, x0, y = sample_system(shape, ensemble, model.true_prior,
                                 model.true_channel, rng)
        if sampler == "enumeration":
            post = enumerate_posterior(y, H, model.post_prior, model.post_channel,
                                       gray=gt)
            xs = post.sample(1, rng)[0]
            pme = post.pme
        elif sampler == "gaussian":
            mean, cov = gaussian_posterior(y, H, model.post_channel.sigma2,
                                           iid_part(model.post_prior).variance)
            chol = np.linalg.cholesky(cov)
            xs = mean + chol @ rng.standard_normal(shape.K)
            pme = mean
        else:
            res = gibbs_sample(y, H, model.post_prior, model.post_channel,
                               sweeps=gibbs_sweeps, burn_in=gibbs_burn_in,
                               rng=rng, thin=gibbs_thin)
            xs = res.final
            pme = res.pme_estimate
        x0_out[t] = x0[:L]
        x_out[t] = xs[:L]
        pme_out[t] = pme[:L]

    if threads <= 1:
        for t in range(trials):
            run_trial(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_trial, range(trials)))

    return SampleSet(shape=shape, L=L, x0=x0_out, x=x_out, pme=pme_out,
                     master_seed=master_seed, sampler=sampler,
                     ensemble=ensemble.kind, trials=trials,
                     gibbs={"sweeps": gibbs_sweeps, "burn_in": gibbs_burn_in,
                            "thin": gibbs_thin} if sampler == "gibbs" else {})


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def write_samples_csv(path, samples: SampleSet):
    L = samples.L
    header = ["trial"] + [f"x0{k+1}" for k in range(L)] + \
        [f"x{k+1}" for k in range(L)] + [f"pme{k+1}" for k in range(L)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(samples.trials):
            row = [t] + [repr(float(v)) for v in samples.x0[t]] \
                + [repr(float(v)) for v in samples.x[t]] \
                + [repr(float(v)) for v in samples.pme[t]]
            writer.writerow(row)


def read_samples_csv(path, shape: SystemShape, L: int, master_seed: int,
                     sampler: str, ensemble: str) -> SampleSet:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    trials = data.shape[0]
    return SampleSet(shape=shape, L=L,
                     x0=data[:, 1:1 + L].reshape(trials, L),
                     x=data[:, 1 + L:1 + 2 * L].reshape(trials, L),
                     pme=data[:, 1 + 2 * L:1 + 3 * L].reshape(trials, L),
                     master_seed=master_seed, sampler=sampler,
                     ensemble=ensemble, trials=trials)
