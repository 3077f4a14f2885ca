"""Pseudo-marginal adaptive random-walk Metropolis-Hastings.

The target is evaluated through a noisy but unbiased likelihood estimator.
The estimate attached to the current state is stored and reused in every
later acceptance ratio; it is never recomputed. Each proposal gets its own
estimator seed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class InitializationError(ValueError):
    pass


@dataclass
class MhSettings:
    """Sampler settings.

    ``bounds`` is an (d, 2) box defining the flat prior; ``log_prior`` adds a
    user log density on top of the box indicator. ``adapt=False`` with
    ``mixture_weight=1`` gives plain random-walk MH with covariance
    ``step * proposal_cov``.
    """

    n_draws: int
    burn_in: int
    theta0: np.ndarray
    bounds: np.ndarray
    target_accept: float = 0.234
    mixture_weight: float = 0.95
    diffuse_scale: float | None = None   # default: 10% of box width (or 1.0 if unbounded)
    decay: float = 0.6
    proposal_cov: np.ndarray | None = None
    step: float | None = None            # default 2.38^2 / d
    adapt: bool = True
    cov_start: int = 100                 # iterations before the chain covariance is used
    cov_jitter: float = 1e-10
    snapshot_every: int = 1000
    log_prior: Callable | None = None

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        d = self.theta0.size
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(d, 2)
        if not 0.0 <= self.mixture_weight <= 1.0:
            raise ValueError("mixture_weight must lie in [0, 1]")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not self.n_draws > self.burn_in >= 0:
            raise ValueError("need n_draws > burn_in >= 0")
        if self.step is None:
            self.step = 2.38 ** 2 / d
        if self.proposal_cov is None:
            width = self.bounds[:, 1] - self.bounds[:, 0]
            sd = np.where(np.isfinite(width), width / 20.0, 0.1)
            self.proposal_cov = np.diag(sd ** 2)
        self.proposal_cov = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
        if self.diffuse_scale is None:
            width = self.bounds[:, 1] - self.bounds[:, 0]
            self.diffuse_scale = float(np.mean(np.where(np.isfinite(width), 0.1 * width, 1.0)))

    def in_box(self, theta) -> bool:
        return bool(np.all(theta >= self.bounds[:, 0]) and np.all(theta <= self.bounds[:, 1]))

    def prior(self, theta) -> float:
        if not self.in_box(theta):
            return -np.inf
        return 0.0 if self.log_prior is None else float(self.log_prior(theta))


@dataclass(eq=False)
class PosteriorChain:
    draws: np.ndarray          # (n_draws, d)
    logpost: np.ndarray        # stored log-posterior estimate of each draw
    accepted: np.ndarray       # bool per iteration
    stepsize: np.ndarray       # step multiplier used at each iteration
    burn_in: int
    seed: object = None
    cov_snapshots: list = field(default_factory=list)   # (iteration, covariance)
    n_evaluations: int = 0

    def kept(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


def _chol(C):
    C = 0.5 * (C + C.T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        lam, U = np.linalg.eigh(C)
        return U * np.sqrt(np.clip(lam, 0.0, None))


def adaptive_rwmh(estimator: Callable, settings: MhSettings, seed) -> PosteriorChain:
    """Run the pseudo-marginal adaptive RWMH chain.

    Parameters
    ----------
    estimator : callable
        ``estimator(theta, seed) -> float``, a log-likelihood estimate whose
        exponential is unbiased. ``seed`` is a fresh integer per call.
        May return ``-inf``.
    settings : MhSettings
    seed : int
        Root seed. Proposal randomness and estimator seeds come from two
        independent child streams.

    Notes
    -----
    Random numbers per iteration, in order: mixture uniform, d normals,
    acceptance uniform. The step multiplier ``c`` follows
    ``log c += k^-decay (alpha_k - target)`` and the adapted covariance is
    the running chain covariance after ``cov_start`` iterations.
    """
    s = settings
    d = s.theta0.size
    prop_ss, est_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(prop_ss)
    est_rng = np.random.default_rng(est_ss)

    def new_seed():
        return int(est_rng.integers(0, 2 ** 63 - 1))

    theta = s.theta0.copy()
    if not s.in_box(theta):
        raise InitializationError("initial theta lies outside the prior box")
    lp = s.prior(theta)
    if not np.isfinite(lp):
        raise InitializationError("prior density is zero at the initial theta")
    lp = lp + float(estimator(theta, new_seed()))
    n_eval = 1
    if not np.isfinite(lp):
        raise InitializationError("log-posterior estimate is not finite at the initial theta")

    draws = np.empty((s.n_draws, d))
    lps = np.empty(s.n_draws)
    acc = np.zeros(s.n_draws, dtype=bool)
    steps = np.empty(s.n_draws)
    snaps = []

    log_c = np.log(s.step)
    cov = s.proposal_cov.copy()
    L = _chol(np.exp(log_c) * cov)
    # running mean / covariance of the chain (Welford)
    mean = theta.copy()
    M2 = np.zeros((d, d))
    diffuse = s.diffuse_scale

    for k in range(s.n_draws):
        u_mix = rng.random()
        z = rng.standard_normal(d)
        u_acc = rng.random()
        steps[k] = np.exp(log_c)
        if u_mix < s.mixture_weight:
            prop = theta + L @ z
        else:
            prop = theta + diffuse * z
        alpha = 0.0
        if s.in_box(prop):
            lp_prop = s.prior(prop)
            if np.isfinite(lp_prop):
                lp_prop += float(estimator(prop, new_seed()))
                n_eval += 1
                if np.isfinite(lp_prop):
                    alpha = float(np.exp(min(0.0, lp_prop - lp)))
                    if u_acc < alpha:
                        theta, lp = prop, lp_prop
                        acc[k] = True
        draws[k] = theta
        lps[k] = lp

        if s.adapt:
            n = k + 2  # chain length including the initial point
            delta = theta - mean
            mean = mean + delta / n
            M2 = M2 + np.outer(delta, theta - mean)
            gamma = (k + 1) ** (-s.decay)
            log_c += gamma * (alpha - s.target_accept)
            if n > s.cov_start:
                cov = M2 / (n - 1) + s.cov_jitter * np.eye(d)
            L = _chol(np.exp(log_c) * cov)
        if s.snapshot_every and (k + 1) % s.snapshot_every == 0:
            snaps.append((k + 1, np.exp(log_c) * cov))

    return PosteriorChain(draws, lps, acc, steps, s.burn_in, seed, snaps, n_eval)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def grid_search_init(estimator: Callable, bounds, points_per_dim: int = 9, seed=0, log_prior=None):
    """Coarse grid scan over the interior of the prior box.

    Returns ``(theta_best, value_best)``. Each grid point gets its own
    estimator seed.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if not np.all(np.isfinite(bounds)):
        raise ValueError("grid search needs a finite box")
    axes = [lo + (hi - lo) * (np.arange(points_per_dim) + 0.5) / points_per_dim for lo, hi in bounds]
    seeds = np.random.SeedSequence(seed).generate_state(points_per_dim ** len(axes), dtype=np.uint64)
    best, best_val = None, -np.inf
    for th, sd in zip(itertools.product(*axes), seeds):
        th = np.array(th)
        val = float(estimator(th, int(sd) >> 1))
        if log_prior is not None:
            val += float(log_prior(th))
        if val > best_val:
            best, best_val = th, val
    if best is None:
        raise InitializationError("every grid point has a non-finite log-posterior")
    return best, best_val


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _autocorr(x):
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    return ac / ac[0]


def effective_sample_size(x) -> float:
    """ESS with Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2 or np.ptp(x) == 0.0:
        return 1.0
    rho = _autocorr(x)
    pairs = rho[0:n - 1:2] + rho[1:n:2]
    tau_sum = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        tau_sum += g
        prev = g
    tau = max(-1.0 + 2.0 * tau_sum, 1.0 / np.log10(max(n, 10)))
    return float(n / tau)


def split_rhat(chains) -> np.ndarray:
    """Split-R-hat per coordinate for a list of (n, d) chains."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        c = c.reshape(c.shape[0], -1)
        h = c.shape[0] // 2
        halves += [c[:h], c[c.shape[0] - h:]]
    X = np.stack(halves)                 # (m, n, d)
    m, n, _ = X.shape
    means = X.mean(axis=1)
    W = X.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))


def diagnostics(chain, burn_in: int | None = None) -> dict:
    """Acceptance rate, ESS per coordinate and split-R-hat.

    ``chain`` is a :class:`PosteriorChain`, an (n, d) array or a list of
    either (several chains).
    """
    chains = chain if isinstance(chain, (list, tuple)) else [chain]
    draws, accs = [], []
    for c in chains:
        if isinstance(c, PosteriorChain):
            b = c.burn_in if burn_in is None else burn_in
            draws.append(c.draws[b:])
            accs.append(c.accepted[b:])
        else:
            a = np.asarray(c, dtype=float)
            a = a.reshape(a.shape[0], -1)[burn_in or 0:]
            draws.append(a)
            accs.append(np.any(np.diff(a, axis=0) != 0, axis=1))
    if min(len(x) for x in draws) < 100:
        raise ValueError("diagnostics need at least 100 draws per chain")
    d = draws[0].shape[1]
    ess = [float(sum(effective_sample_size(x[:, i]) for x in draws)) for i in range(d)]
    return {
        "acceptance_rate": float(np.mean(np.concatenate(accs))),
        "ess": ess,
        "rhat": [float(v) for v in split_rhat(draws)],
        "n_draws": int(sum(len(x) for x in draws)),
        "n_chains": len(draws),
    }
