"""Linear-Gaussian state space core.

The model is::

    z_t - zbar = A (z_{t-1} - zbar) + B eps_t,   eps_t ~ N(0, I)
    x_t        = S z_t + e_t,                    e_t ~ N(0, diag(sigma_e**2))

with z_1 drawn from the stationary distribution N(zbar, Sigma), where
Sigma = A Sigma A' + B B'.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

LOG_2PI = np.log(2.0 * np.pi)
SINGULAR_TOL = 1e-12


class NonStationaryError(ValueError):
    """Transition matrix has spectral radius >= 1."""


class SingularForecastError(np.linalg.LinAlgError):
    """One-step-ahead forecast covariance is (numerically) singular."""


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _positive_definite(F) -> bool:
    """Scale-free definiteness check on the correlation form of ``F``."""
    if not np.all(np.isfinite(F)):
        return False
    d = np.diag(F)
    if np.any(d <= SINGULAR_TOL):
        return False
    s = 1.0 / np.sqrt(d)
    return np.linalg.eigvalsh(F * s[:, None] * s[None, :])[0] > SINGULAR_TOL


def _sym(P):
    return 0.5 * (P + P.T)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """System matrices of a stationary linear-Gaussian state space model."""

    zbar: np.ndarray
    A: np.ndarray
    B: np.ndarray
    S: np.ndarray
    sigma_e: np.ndarray

    def __post_init__(self):
        zbar = np.atleast_1d(np.asarray(self.zbar, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        sigma_e = np.atleast_1d(np.asarray(self.sigma_e, dtype=float))
        n = zbar.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n}, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        if S.shape[1] != n:
            raise ValueError(f"S must have {n} columns, got {S.shape}")
        if sigma_e.shape != (S.shape[0],):
            raise ValueError(f"sigma_e must have length {S.shape[0]}, got {sigma_e.shape}")
        if np.any(sigma_e < 0) or not np.all(np.isfinite(sigma_e)):
            raise ValueError("sigma_e entries must be finite and >= 0")
        for name, arr in (("zbar", zbar), ("A", A), ("B", B), ("S", S)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        rho = spectral_radius(A)
        if not rho < 1.0:
            raise NonStationaryError(f"spectral radius of A is {rho:.6g} >= 1")
        object.__setattr__(self, "zbar", zbar)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "sigma_e", sigma_e)

    @property
    def n_z(self) -> int:
        return self.zbar.shape[0]

    @property
    def n_x(self) -> int:
        return self.S.shape[0]

    @property
    def n_eps(self) -> int:
        return self.B.shape[1]

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.sigma_e ** 2)

    def stationary_covariance(self) -> np.ndarray:
        return stationary_covariance(self.A, self.B)


def stationary_covariance(A, B) -> np.ndarray:
    """Solve ``Sigma = A Sigma A' + B B'`` for a stable ``A``.

    Raises
    ------
    NonStationaryError
        If the spectral radius of ``A`` is not strictly below one.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    rho = spectral_radius(A)
    if not rho < 1.0:
        raise NonStationaryError(f"spectral radius of A is {rho:.6g} >= 1")
    Sigma = linalg.solve_discrete_lyapunov(A, B @ B.T)
    return _sym(Sigma)


def psd_factor(P) -> np.ndarray:
    """Return L with L L' = P for a symmetric PSD (possibly singular) P."""
    P = _sym(np.atleast_2d(np.asarray(P, dtype=float)))
    w, U = np.linalg.eigh(P)
    w = np.clip(w, 0.0, None)
    return U * np.sqrt(w)


# ---------------------------------------------------------------------------
# General filter with per-period measurement equations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Measurement:
    """Observation ``y = d + Z z + e`` with ``e ~ N(0, H)`` at one period.

    An empty ``y`` (length 0) marks a period without observations.
    """

    y: np.ndarray
    d: np.ndarray
    Z: np.ndarray
    H: np.ndarray

    @staticmethod
    def empty(n_z: int) -> "Measurement":
        return Measurement(np.zeros(0), np.zeros(0), np.zeros((0, n_z)), np.zeros((0, 0)))

    @property
    def k(self) -> int:
        return self.y.shape[0]


@dataclass(eq=False)
class FilterResult:
    """Kalman filter output.

    ``predicted_*`` hold the moments of z_t given x_{1..t-1}, ``filtered_*``
    those given x_{1..t}.
    """

    loglik: float
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    # per-period quantities reused by the smoothers
    _v: list = field(default_factory=list, repr=False)
    _ZtFinv: list = field(default_factory=list, repr=False)
    _L: list = field(default_factory=list, repr=False)
    _meas: list = field(default_factory=list, repr=False)
    _A: np.ndarray | None = field(default=None, repr=False)


def filter_measurements(zbar, A, Q, measurements: Sequence[Measurement],
                        P1=None) -> FilterResult:
    """Kalman filter for a time-invariant transition and per-period observations.

    ``Q`` is the state innovation covariance ``B B'``. The filter starts at the
    stationary distribution unless ``P1`` is given.
    """
    zbar = np.asarray(zbar, dtype=float)
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = zbar.shape[0]
    T = len(measurements)
    if P1 is None:
        if not spectral_radius(A) < 1.0:
            raise NonStationaryError("spectral radius of A is >= 1")
        P1 = _sym(linalg.solve_discrete_lyapunov(A, Q))
    I = np.eye(n)
    c = zbar - A @ zbar

    a_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    a_filt = np.empty((T, n))
    P_filt = np.empty((T, n, n))
    res = FilterResult(0.0, a_filt, P_filt, a_pred, P_pred, _A=A, _meas=list(measurements))

    a = zbar.copy()
    P = np.array(P1, dtype=float)
    loglik = 0.0
    for t, m in enumerate(measurements):
        a_pred[t] = a
        P_pred[t] = P
        if m.k == 0:
            af, Pf = a, P
            res._v.append(np.zeros(0))
            res._ZtFinv.append(np.zeros((n, 0)))
            res._L.append(A)
        else:
            Z = m.Z
            v = m.y - m.d - Z @ a
            if m.k == 1:
                # scalar forecast variance: no factorization needed
                PZ = P @ Z[0]
                f = float(Z[0] @ PZ + m.H[0, 0])
                if not np.isfinite(f) or f <= SINGULAR_TOL * max(1.0, abs(f)):
                    raise SingularForecastError(f"forecast covariance is singular at t={t + 1}")
                loglik += -0.5 * (LOG_2PI + np.log(f) + v[0] * v[0] / f)
                ZtFinv = Z.T / f
                Kf = PZ[:, None] / f
                af = a + Kf[:, 0] * v[0]
                IKZ = I - Kf @ Z
                Pf = _sym(IKZ @ P @ IKZ.T + (m.H[0, 0] * Kf) @ Kf.T)
                res._v.append(v)
                res._ZtFinv.append(ZtFinv)
                res._L.append(A @ IKZ)
                a_filt[t] = af
                P_filt[t] = Pf
                a = c + A @ af
                P = _sym(A @ Pf @ A.T + Q)
                continue
            F = _sym(Z @ P @ Z.T + m.H)
            if not _positive_definite(F):
                raise SingularForecastError(f"forecast covariance is singular at t={t + 1}")
            cf = linalg.cho_factor(F, lower=True)
            Finv_v = linalg.cho_solve(cf, v)
            logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
            loglik += -0.5 * (m.k * LOG_2PI + logdet + v @ Finv_v)
            ZtFinv = linalg.cho_solve(cf, Z).T           # Z' F^{-1}, n x k
            Kf = P @ ZtFinv                              # filter gain
            af = a + Kf @ v
            IKZ = I - Kf @ Z
            Pf = _sym(IKZ @ P @ IKZ.T + Kf @ m.H @ Kf.T)  # Joseph form
            res._v.append(v)
            res._ZtFinv.append(ZtFinv)
            res._L.append(A @ IKZ)
        a_filt[t] = af
        P_filt[t] = Pf
        a = c + A @ af
        P = _sym(A @ Pf @ A.T + Q)
    res.loglik = float(loglik)
    return res


def model_measurements(model: StateSpaceModel, x) -> list[Measurement]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if model.n_x == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != model.n_x:
        raise ValueError(f"x must be T x {model.n_x}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("missing or non-finite macro observations are not supported")
    d = np.zeros(model.n_x)
    R = model.R
    return [Measurement(row, d, model.S, R) for row in x]


def kalman_filter(model: StateSpaceModel, x) -> FilterResult:
    """Run the Kalman filter and return the exact Gaussian log-likelihood.

    Parameters
    ----------
    model : StateSpaceModel
    x : array_like, shape (T, n_x)
        Macro observations, no missing values.

    Returns
    -------
    FilterResult
        ``loglik`` is ``log p(x | model)`` with z_1 from the stationary law.
    """
    meas = model_measurements(model, x)
    return filter_measurements(model.zbar, model.A, model.B @ model.B.T, meas,
                               P1=model.stationary_covariance())


# ---------------------------------------------------------------------------
# Smoothing
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SmootherOutput:
    means: np.ndarray        # (T, n_z)
    covariances: np.ndarray  # (T, n_z, n_z)


def smooth_filtered(res: FilterResult) -> SmootherOutput:
    """Fixed-interval smoother via the backward (r, N) recursion."""
    T, n = res.predicted_means.shape
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    r = np.zeros(n)
    N = np.zeros((n, n))
    for t in range(T - 1, -1, -1):
        m = res._meas[t]
        L = res._L[t]
        if m.k:
            ZtFinv = res._ZtFinv[t]
            r = ZtFinv @ res._v[t] + L.T @ r
            N = ZtFinv @ m.Z + L.T @ N @ L
        else:
            r = L.T @ r
            N = L.T @ N @ L
        N = _sym(N)
        P = res.predicted_covs[t]
        means[t] = res.predicted_means[t] + P @ r
        covs[t] = _sym(P - P @ N @ P)
    return SmootherOutput(means, covs)


def kalman_smoother(model: StateSpaceModel, x) -> SmootherOutput:
    """Smoothed means E[z_t | x] and covariances V[z_t | x]."""
    return smooth_filtered(kalman_filter(model, x))


def _smoothed_mean_pass(res: FilterResult, Y: list[np.ndarray]) -> np.ndarray:
    """Smoothed means for data ``Y`` (per-period (k_t, J) arrays) with zero
    intercepts and zero initial mean, reusing the gains in ``res``.

    Returns an array of shape (T, n, J).
    """
    T, n = res.predicted_means.shape
    J = next((y.shape[1] for y in Y if y.shape[0]), 1)
    A = res._A
    a = np.zeros((n, J))
    a_pred = np.empty((T, n, J))
    vs = []
    for t in range(T):
        a_pred[t] = a
        m = res._meas[t]
        if m.k:
            v = Y[t] - m.Z @ a
            Kf = res.predicted_covs[t] @ res._ZtFinv[t]
            a = A @ (a + Kf @ v)
        else:
            v = None
            a = A @ a
        vs.append(v)
    out = np.empty((T, n, J))
    r = np.zeros((n, J))
    for t in range(T - 1, -1, -1):
        L = res._L[t]
        if vs[t] is not None:
            r = res._ZtFinv[t] @ vs[t] + L.T @ r
        else:
            r = L.T @ r
        out[t] = a_pred[t] + res.predicted_covs[t] @ r
    return out


@dataclass(eq=False)
class StatePathDraws:
    draws: np.ndarray  # (J, T, n_z)
    seed: int
    J: int

    def __post_init__(self):
        if self.J < 1 or self.draws.shape[0] != self.J:
            raise ValueError("J must be >= 1 and match the number of paths")

    def __getitem__(self, j) -> np.ndarray:
        return self.draws[j]

    def __len__(self):
        return self.J


def draw_streams(seed, n: int) -> list[np.random.Generator]:
    """One independent generator per index 0..n-1, derived from ``seed``."""
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def _simulate_from_normals(model: StateSpaceModel, z0_std, shocks, meas):
    """Vectorised simulation. Arrays carry a trailing draw axis of size J.

    z0_std: (n_z, J); shocks: (T, n_eps, J); meas: (T, n_x, J).
    Returns z (T, n_z, J) and x (T, n_x, J).
    """
    T = shocks.shape[0]
    F0 = psd_factor(model.stationary_covariance())
    J = z0_std.shape[1]
    z = np.empty((T, model.n_z, J))
    dev = F0 @ z0_std
    zbar = model.zbar[:, None]
    z[0] = zbar + dev
    for t in range(1, T):
        dev = model.A @ dev + model.B @ shocks[t]
        z[t] = zbar + dev
    x = np.einsum("ij,tjk->tik", model.S, z) + model.sigma_e[None, :, None] * meas
    return z, x


def _normals(rng: np.random.Generator, model: StateSpaceModel, T: int):
    z0 = rng.standard_normal(model.n_z)
    shocks = rng.standard_normal((T, model.n_eps))
    meas = rng.standard_normal((T, model.n_x))
    return z0, shocks, meas


def simulate(model: StateSpaceModel, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Simulate a state path and observations of length ``T``.

    Returns ``(z, x)`` with shapes (T, n_z) and (T, n_x).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    z0, shocks, meas = _normals(np.random.default_rng(seed), model, T)
    z, x = _simulate_from_normals(model, z0[:, None], shocks[:, :, None], meas[:, :, None])
    return z[:, :, 0], x[:, :, 0]


def simulation_smoother_draws(model: StateSpaceModel, x, J: int, seed,
                              filtered: FilterResult | None = None) -> StatePathDraws:
    """Draw ``J`` state paths from p(z | x) by the mean-correction simulation smoother.

    Each path j uses its own random stream spawned from ``seed``, so a path
    depends only on (model, x, seed, j). ``filtered`` may pass the output of
    ``kalman_filter(model, x)`` to avoid filtering twice.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if filtered is None:
        meas = model_measurements(model, x)
        res = filter_measurements(model.zbar, model.A, model.B @ model.B.T, meas,
                                  P1=model.stationary_covariance())
    else:
        res = filtered
        meas = res._meas
    T = len(meas)
    z0 = np.empty((model.n_z, J))
    shocks = np.empty((T, model.n_eps, J))
    e = np.empty((T, model.n_x, J))
    for j, rng in enumerate(draw_streams(seed, J)):
        z0[:, j], shocks[:, :, j], e[:, :, j] = _normals(rng, model, T)
    z_plus, x_plus = _simulate_from_normals(model, z0, shocks, e)
    xarr = np.stack([m.y for m in meas])
    diff = xarr[:, :, None] - x_plus
    # E[z|x] - E[z|x_plus] is the zero-intercept smoother applied to x - x_plus
    paths = z_plus + _smoothed_mean_pass(res, [diff[t] for t in range(T)])
    return StatePathDraws(np.ascontiguousarray(np.moveaxis(paths, 2, 0)), seed, J)


def impulse_response(model: StateSpaceModel, shock: int, scale: float = 1.0,
                     horizon: int = 20) -> np.ndarray:
    """State responses A^h B e_shock * scale for h = 0..horizon, shape (H+1, n_z)."""
    if not 0 <= shock < model.n_eps:
        raise IndexError(f"shock index {shock} out of range for {model.n_eps} shocks")
    out = np.empty((horizon + 1, model.n_z))
    v = model.B[:, shock] * scale
    for h in range(horizon + 1):
        out[h] = v
        v = model.A @ v
    return out
