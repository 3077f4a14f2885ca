"""Exponential-polynomial densities parametrized by their central moments.

On a finite support [lo, hi] the density is

    g(a) = exp{phi_0 + phi_1 (a - m1) + sum_{l=2..q} phi_l [(a - m1)^l - m_l]}

where m1 is the mean and m_l the l-th central moment. Coefficients are found
by damped Newton on the moment-matching conditions with Gauss-Legendre
quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator

DEFAULT_NODES = 256
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
CDF_CELLS = 1024


class InfeasibleMomentsError(ValueError):
    """The requested moments cannot belong to a density on the support."""


class FitError(RuntimeError):
    """Newton iteration failed to match the moments."""

    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual norm {residual:.3e})")
        self.residual = residual


@lru_cache(maxsize=64)
def _gl_unit(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(lo: float, hi: float, n: int):
    """Nodes and weights of the n-point Gauss-Legendre rule on [lo, hi]."""
    x, w = _gl_unit(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _features(a, m1, central, q):
    """Columns h_1..h_q evaluated at a: (a-m1), (a-m1)^l - m_l."""
    dev = np.asarray(a, dtype=float) - m1
    cols = [dev]
    p = dev
    for ell in range(2, q + 1):
        p = p * dev
        cols.append(p - central[ell - 2])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class ExpFamDensity:
    q: int
    lo: float
    hi: float
    m1: float
    central_moments: tuple  # m_2..m_q
    coeffs: np.ndarray      # phi_0..phi_q
    n_nodes: int = DEFAULT_NODES

    @property
    def support(self) -> tuple[float, float]:
        return self.lo, self.hi

    def log_unnormalized(self, a):
        return _features(a, self.m1, self.central_moments, self.q) @ self.coeffs[1:]

    def pdf(self, a):
        return density_at(self, a)

    def cdf(self, a):
        return cdf_at(self, a)

    @cached_property
    def _cdf_table(self):
        # exact Gauss-Legendre mass per cell, accumulated
        edges = np.linspace(self.lo, self.hi, CDF_CELLS + 1)
        x, w = _gl_unit(8)
        half = 0.5 * np.diff(edges)
        nodes = edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)
        mass = np.sum(density_at(self, nodes) * w[None, :], axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(mass)])
        cum /= cum[-1]
        return edges, cum

    @cached_property
    def _inverse_cdf(self):
        edges, cum = self._cdf_table
        keep = np.concatenate([[True], np.diff(cum) > 1e-15])
        u, a = cum[keep], edges[keep]
        if u[-1] < 1.0:
            u = np.append(u, 1.0)
            a = np.append(a, self.hi)
        return PchipInterpolator(u, a, extrapolate=False)


def _check_feasible(lo, hi, m1, central):
    if not hi > lo:
        raise InfeasibleMomentsError(f"empty support [{lo}, {hi}]")
    if not lo < m1 < hi:
        raise InfeasibleMomentsError(f"mean {m1} is not inside ({lo}, {hi})")
    if not central:
        return
    m2 = central[0]
    max_var = (m1 - lo) * (hi - m1)
    if not 0.0 < m2 < max_var:
        raise InfeasibleMomentsError(
            f"variance {m2} not in (0, {max_var}) for mean {m1} on [{lo}, {hi}]")
    if len(central) >= 3:
        m3, m4 = central[1], central[2]
        # Pearson: kurtosis >= skewness^2 + 1
        if m4 <= m2 ** 2 + m3 ** 2 / m2:
            raise InfeasibleMomentsError("fourth central moment violates m4 > m2^2 + m3^2/m2")
    for ell, m in enumerate(central, start=2):
        if ell % 2 == 0 and m <= 0:
            raise InfeasibleMomentsError(f"even central moment m{ell} must be positive")


def fit_coefficients(q: int, support, m1: float, central_moments=(), n_nodes: int = DEFAULT_NODES,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     start=None) -> ExpFamDensity:
    """Fit the exponential-polynomial density matching mean and central moments.

    Parameters
    ----------
    q : int
        Polynomial order, >= 1.
    support : (float, float)
        Finite interval [lo, hi].
    m1 : float
        Target mean.
    central_moments : sequence of float
        Target central moments m_2..m_q.
    n_nodes : int
        Gauss-Legendre node count.
    tol, max_iter :
        Newton stopping rule on the moment residual norm.
    start : array_like, optional
        Initial phi_1..phi_q (default zeros, the uniform density).

    Raises
    ------
    InfeasibleMomentsError
        If the moments are impossible on the support.
    FitError
        If Newton does not reach ``tol`` in ``max_iter`` iterations.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    lo, hi = float(support[0]), float(support[1])
    central = tuple(float(m) for m in central_moments)
    if len(central) != q - 1:
        raise ValueError(f"need {q - 1} central moments for q={q}, got {len(central)}")
    m1 = float(m1)
    _check_feasible(lo, hi, m1, central)

    a, w = gauss_legendre(lo, hi, n_nodes)
    H = _features(a, m1, central, q)

    def evaluate(phi):
        s = H @ phi
        smax = np.max(s)
        e = w * np.exp(s - smax)
        Z = e.sum()
        p = e / Z
        r = H.T @ p
        return r, p, smax + np.log(Z)

    phi = np.zeros(q) if start is None else np.array(start, dtype=float)
    r, p, logZ = evaluate(phi)
    norm = np.linalg.norm(r)
    if not np.isfinite(norm):
        phi = np.zeros(q)
        r, p, logZ = evaluate(phi)
        norm = np.linalg.norm(r)
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise FitError(f"no convergence after {max_iter} iterations", norm)
        it += 1
        Hc = H - r
        cov = (Hc * p[:, None]).T @ Hc
        try:
            step = np.linalg.solve(cov, -r)
        except np.linalg.LinAlgError:
            raise FitError("singular moment Jacobian", norm) from None
        lam = 1.0
        while True:
            cand = phi + lam * step
            r_new, p_new, logZ_new = evaluate(cand)
            n_new = np.linalg.norm(r_new)
            if np.isfinite(n_new) and n_new < norm:
                break
            lam *= 0.5
            if lam < 1e-12:
                raise FitError("line search failed", norm)
        phi, r, p, logZ, norm = cand, r_new, p_new, logZ_new, n_new

    coeffs = np.concatenate([[-logZ], phi])
    coeffs.setflags(write=False)
    return ExpFamDensity(q, lo, hi, m1, central, coeffs, n_nodes)


def density_at(d: ExpFamDensity, a):
    """Density value(s); zero outside the support."""
    a = np.asarray(a, dtype=float)
    inside = (a >= d.lo) & (a <= d.hi)
    val = np.exp(d.coeffs[0] + d.log_unnormalized(np.where(inside, a, d.m1)))
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def moments_of(d: ExpFamDensity, order: int | None = None, n_nodes: int | None = None) -> np.ndarray:
    """Return ``[m1, m2, ..., m_order]`` (mean then central moments) by quadrature."""
    order = d.q if order is None else order
    a, w = gauss_legendre(d.lo, d.hi, n_nodes or d.n_nodes)
    g = w * density_at(d, a)
    mean = np.sum(g * a) / np.sum(g) if order >= 1 else 0.0
    out = [mean]
    dev = a - mean
    for ell in range(2, order + 1):
        out.append(np.sum(g * dev ** ell))
    return np.array(out[:max(order, 1)])


def total_mass(d: ExpFamDensity, n_nodes: int | None = None) -> float:
    a, w = gauss_legendre(d.lo, d.hi, n_nodes or d.n_nodes)
    return float(np.sum(w * density_at(d, a)))


def cdf_at(d: ExpFamDensity, a):
    """P(A <= a) by Gauss-Legendre quadrature on [lo, a]."""
    a = np.asarray(a, dtype=float)
    x, w = _gl_unit(d.n_nodes)
    upper = np.clip(a, d.lo, d.hi)
    half = 0.5 * (upper - d.lo)
    nodes = d.lo + half[..., None] * (x + 1.0)
    val = np.sum(density_at(d, nodes) * w, axis=-1) * half
    val = np.clip(val, 0.0, 1.0)
    return val if val.ndim else float(val)


def sample(d: ExpFamDensity, n: int, seed=None, uniforms=None) -> np.ndarray:
    """Draw by inverse CDF on a precomputed monotone grid.

    ``uniforms`` may be supplied instead of a seed.
    """
    u = np.random.default_rng(seed).random(n) if uniforms is None else np.asarray(uniforms, dtype=float)
    out = d._inverse_cdf(np.clip(u, 0.0, 1.0))
    return np.clip(out, d.lo, d.hi)
