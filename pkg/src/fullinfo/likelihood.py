"""Joint macro/micro likelihood and its numerically unbiased estimate.

    p(x, y | theta) = p(x | theta) * int prod_t prod_i p(y_it | z_t, theta) p(z | x, theta) dz

The macro part comes from the Kalman filter. The micro part is estimated by
averaging the cross-sectional likelihood *levels* over J draws from the
smoothing distribution p(z | x, theta).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .microdens import MicroDataset
from .statespace import (Measurement, filter_measurements, kalman_filter,
                         simulation_smoother_draws)


def logmeanexp(v) -> float:
    """``log(mean(exp(v)))`` with max subtraction; ``-inf`` entries allowed."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("logmeanexp of an empty vector")
    vmax = np.max(v)
    if vmax == -np.inf:
        return -np.inf
    if not np.isfinite(vmax):
        return float(vmax)
    return float(vmax + np.log(np.mean(np.exp(v - vmax))))


@dataclass(eq=False)
class LogLikEstimate:
    macro_loglik: float
    micro_loglik_estimate: float
    J: int
    seed: object
    per_draw_logliks: np.ndarray

    @property
    def total(self) -> float:
        return self.macro_loglik + self.micro_loglik_estimate

    @property
    def degenerate(self) -> bool:
        """True when some smoothing draw gave a non-finite micro log-likelihood."""
        return not np.all(np.isfinite(self.per_draw_logliks))


def micro_loglik_given_states(theta, z_path, micro: MicroDataset, provider) -> float:
    """``sum_{t in T} sum_i log p(y_it | z_t, theta)`` for one state path.

    ``z_path`` is (T, n_z) with row t-1 holding z_t. The reduction runs in
    fixed (t, i) order.
    """
    total = 0.0
    for t in micro.times:
        lp = np.asarray(provider.micro_logpdf(theta, z_path, t, micro[t]), dtype=float)
        total += float(np.sum(lp))
    return total


def _map(fn, items, workers: int):
    if workers is None or workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def macro_loglik(theta, x, provider) -> float:
    return kalman_filter(provider.state_space(theta), x).loglik


def full_info_loglik(theta, x, micro: MicroDataset, provider, J: int, seed, workers: int = 1) -> LogLikEstimate:
    """Macro log-likelihood plus the log of the unbiased J-draw micro estimate.

    Parameters
    ----------
    theta : array_like
        Free parameter vector understood by ``provider``.
    x : array_like, shape (T, n_x)
    micro : MicroDataset
    provider : ModelProvider
    J : int
        Number of smoothing draws.
    seed :
        Root seed; draw j uses its own spawned stream. Pass a fresh seed for
        every MCMC proposal.
    workers : int
        Threads used across draws; the result does not depend on it.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    model = provider.state_space(theta)
    filt = kalman_filter(model, x)
    macro = filt.loglik
    if not np.isfinite(macro):
        raise FloatingPointError("macro log-likelihood is not finite")
    if len(micro) == 0:
        return LogLikEstimate(macro, 0.0, J, seed, np.zeros(J))
    draws = simulation_smoother_draws(model, x, J, seed, filtered=filt)
    per_draw = np.array(_map(lambda j: micro_loglik_given_states(theta, draws[j], micro, provider),
                             range(J), workers))
    return LogLikEstimate(macro, logmeanexp(per_draw), J, seed, per_draw)


def exact_joint_loglik_toy(theta, x, micro: MicroDataset, provider) -> float:
    """Exact ``log p(x, y | theta)`` for the linear Gaussian toy model.

    Per-period micro means enter an augmented Kalman filter with noise
    variance sigma_u^2 / N_t; the within-period residual term is added in
    closed form.
    """
    if not getattr(provider, "is_linear_gaussian_toy", False):
        raise TypeError("exact joint likelihood is only available for the linear Gaussian toy")
    model = provider.state_space(theta)
    s2u = provider.params(theta)["sigma_u"] ** 2
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    T = x.shape[0]
    resid = 0.0
    meas = []
    R = model.R
    for t in range(1, T + 1):
        if t in micro.blocks:
            y = np.asarray(micro[t]["y"], dtype=float)
            N = y.size
            ybar = float(np.mean(y))
            ss = float(np.sum((y - ybar) ** 2))
            resid += -0.5 * (N - 1) * np.log(2 * np.pi * s2u) - 0.5 * np.log(N) - ss / (2 * s2u)
            H = np.diag([R[0, 0], s2u / N])
            meas.append(Measurement(np.array([x[t - 1, 0], ybar]), np.zeros(2),
                                    np.vstack([model.S, model.S]), H))
        else:
            meas.append(Measurement(x[t - 1], np.zeros(1), model.S, R))
    res = filter_measurements(model.zbar, model.A, model.B @ model.B.T, meas,
                              P1=model.stationary_covariance())
    return res.loglik + resid
