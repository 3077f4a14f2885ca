"""Moment-based baseline likelihoods.

Cross-sectional sample moments enter the Kalman filter as extra observables
with a Gaussian measurement error whose covariance is the asymptotic sampling
covariance of the moments, built from time-averaged higher moments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .microdens import MicroDataset
from .statespace import Measurement, filter_measurements

PSD_CLIP = 1e-12
PSD_TOL = 1e-8


class NonPSDError(np.linalg.LinAlgError):
    pass


def central_moments(v, max_order: int) -> np.ndarray:
    """``[mean, m2, ..., m_max]`` without degree-of-freedom correction."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("cannot compute moments of an empty group")
    mean = v.mean()
    dev = v - mean
    return np.array([mean] + [np.mean(dev ** k) for k in range(2, max_order + 1)])


def group_central_moments(groups: dict, max_order: int = 3) -> dict:
    """Sample mean and central moments per group.

    Parameters
    ----------
    groups : dict
        Group label -> 1-D array of values.
    max_order : int
        Highest central moment.

    Returns
    -------
    dict
        Group label -> ``[mean, m2, ..., m_max_order]``.
    """
    out = {}
    for g, v in groups.items():
        if np.asarray(v).size == 0:
            raise ValueError(f"group {g!r} is empty")
        out[g] = central_moments(v, max_order)
    return out


@dataclass(frozen=True)
class MomentSeries:
    times: tuple
    groups: tuple
    moments: np.ndarray   # (n_times, n_groups, 3): mean, m2, m3
    higher: np.ndarray    # (n_times, n_groups, 6): mean, m2..m6
    counts: np.ndarray    # (n_times, n_groups)

    def flat(self, k: int) -> np.ndarray:
        """Group-major vector of (mean, m2, m3) at the k-th observation time."""
        return self.moments[k].ravel()

    def time_averaged(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-sample averages of the moments and of the group counts."""
        return self.higher.mean(axis=0), self.counts.mean(axis=0)


def moment_series(micro: MicroDataset, provider) -> MomentSeries:
    groups = tuple(provider.moment_groups)
    mom, high, cnt = [], [], []
    for block in micro:
        vals = provider.group_values(block)
        gm = group_central_moments({g: vals[g] for g in groups}, 6)
        high.append([gm[g] for g in groups])
        mom.append([gm[g][:3] for g in groups])
        cnt.append([np.asarray(vals[g]).size for g in groups])
    n = len(micro)
    return MomentSeries(tuple(micro.times), groups, np.array(mom).reshape(n, len(groups), 3),
                        np.array(high).reshape(n, len(groups), 6), np.array(cnt, dtype=float).reshape(n, len(groups)))


@dataclass(frozen=True)
class MomentVcv:
    matrix: np.ndarray
    blocks: tuple
    repaired: bool = False


def moment_block(m, N: float) -> np.ndarray:
    """3x3 sampling covariance of (mean, m2, m3) from moments ``m = [m1, m2..m6]``."""
    if N <= 0:
        raise ValueError("group count must be positive")
    _, m2, m3, m4, m5, m6 = (float(v) for v in m)
    V = np.empty((3, 3))
    V[0, 0] = m2
    V[1, 1] = m4 - m2 * m2
    V[2, 2] = m6 - 6 * m4 * m2 - m3 * m3 + 9 * m2 ** 3
    V[0, 1] = V[1, 0] = m3
    V[0, 2] = V[2, 0] = m4 - 3 * m2 * m2
    V[1, 2] = V[2, 1] = m5 - 4 * m3 * m2
    return V / N


def moment_vcv(moments, counts) -> MomentVcv:
    """Block-diagonal measurement-error covariance of the per-group moments.

    Parameters
    ----------
    moments : array_like, shape (n_groups, 6)
        Time-averaged ``[m1, m2, ..., m6]`` per group.
    counts : array_like, shape (n_groups,)
        Average group sizes.
    """
    moments = np.atleast_2d(np.asarray(moments, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=float))
    if moments.shape != (counts.size, 6):
        raise ValueError("need six moments per group")
    blocks = tuple(moment_block(m, N) for m, N in zip(moments, counts))
    G = len(blocks)
    V = np.zeros((3 * G, 3 * G))
    for g, b in enumerate(blocks):
        V[3 * g:3 * g + 3, 3 * g:3 * g + 3] = b
    tr = np.trace(V)
    lam, U = np.linalg.eigh(V)
    floor = PSD_CLIP * tr
    if lam.min() < -PSD_TOL * max(tr, 1e-300):
        raise NonPSDError(f"moment covariance is materially indefinite (min eigenvalue {lam.min():.3e})")
    if lam.min() < floor:
        V = (U * np.maximum(lam, floor)) @ U.T
        V = 0.5 * (V + V.T)
        return MomentVcv(V, blocks, True)
    return MomentVcv(V, blocks, False)


def vcv_from_series(series: MomentSeries) -> MomentVcv:
    m, n = series.time_averaged()
    return moment_vcv(m, n)


def moment_loglik(theta, x, series: MomentSeries, vcv: MomentVcv, provider, order: int, T: int | None = None) -> float:
    """Kalman log-likelihood of macro data augmented with sample moments.

    Moment rows are present only at observation times; elsewhere the
    measurement is the macro block alone.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    model = provider.state_space(theta)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0] if T is None else T
    if series.times:
        mmap = provider.moment_map(theta)
        rows = mmap.rows(order)
        Hm = vcv.matrix[np.ix_(rows, rows)]
    obs = {t: k for k, t in enumerate(series.times)}
    R = model.R
    meas = []
    for t in range(1, T + 1):
        y, d, Z, H = x[t - 1], np.zeros(model.n_x), model.S, R
        if t in obs:
            y = np.concatenate([y, series.flat(obs[t])[rows]])
            d = np.concatenate([d, mmap.d[rows]])
            Z = np.vstack([Z, mmap.Z[rows]])
            Hf = np.zeros((y.size, y.size))
            Hf[:model.n_x, :model.n_x] = R
            Hf[model.n_x:, model.n_x:] = Hm
            H = Hf
        meas.append(Measurement(y, d, Z, H))
    res = filter_measurements(model.zbar, model.A, model.B @ model.B.T, meas, P1=model.stationary_covariance())
    return res.loglik


def chi2_moment_distribution_test(N: int, m2: float, reps: int, seed, against: str = "chi2"):
    """KS test of ``N m2_hat / m2`` from Gaussian cross sections.

    ``against='chi2'`` compares with chi-squared(N-1), the exact law;
    ``against='normal'`` with its Gaussian approximation N(N-1, 2(N-1)).
    Returns the scipy KS result (statistic, pvalue).
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = np.random.default_rng(seed)
    draws = np.sqrt(m2) * rng.standard_normal((reps, N))
    stat = N * np.var(draws, axis=1) / m2
    if against == "chi2":
        return stats.kstest(stat, stats.chi2(N - 1).cdf)
    if against == "normal":
        return stats.kstest(stat, stats.norm(N - 1, np.sqrt(2.0 * (N - 1))).cdf)
    raise ValueError(f"unknown reference law {against!r}")
