"""Micro sampling densities p(y_it | z_t, theta).

Household income with lognormal permanent productivity, asset mixtures with
a point mass at the borrowing constraint, selection-truncated densities,
two-period panel densities, sufficient statistics and cross-section
simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import interpolate, stats
from scipy.special import ndtr

from .expfam import ExpFamDensity, density_at, gauss_legendre, sample as expfam_sample


class IntegrationError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureAtZero:
    """Point mass ``pi0`` at zero mixed with a continuous density on (0, hi]."""

    pi0: float
    cont: ExpFamDensity

    def __post_init__(self):
        if not 0.0 <= self.pi0 <= 1.0:
            raise ValueError(f"pi0 must lie in [0, 1], got {self.pi0}")
        if self.cont.lo < 0.0:
            raise ValueError("continuous component must live on nonnegative assets")


def lognormal_sigma(mu_lambda: float) -> float:
    """Std dev of log(lambda) that makes E[lambda] = 1."""
    if mu_lambda > 0:
        raise ValueError(f"mu_lambda must be <= 0, got {mu_lambda}")
    return float(np.sqrt(-2.0 * mu_lambda))


def lognormal_pdf(x, mu: float, sigma: float):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(np.where(x > 0, x, 1.0))
        val = np.exp(-0.5 * ((lx - mu) / sigma) ** 2) / (x * sigma) / np.sqrt(2.0 * np.pi)
    return np.where(x > 0, val, 0.0)


@dataclass(frozen=True, eq=False)
class HouseholdMicroParams:
    """Everything needed to evaluate or simulate one household cross section."""

    w: float
    r: float
    tau: float
    b: float
    mu_lambda: float
    asset_dist: Mapping[int, MixtureAtZero]
    L: float

    def __post_init__(self):
        if not 0.0 < self.L < 1.0:
            raise ValueError(f"employment rate L must lie in (0, 1), got {self.L}")
        if self.mu_lambda > 0:
            raise ValueError("mu_lambda must be <= 0")
        if self.r <= -1.0:
            raise ValueError("gross return 1 + r must be positive")
        if set(self.asset_dist) != {0, 1}:
            raise ValueError("asset_dist needs entries for eps = 0 and eps = 1")

    @property
    def sigma_lambda(self) -> float:
        return lognormal_sigma(self.mu_lambda)

    def xi(self, eps: int) -> float:
        """Labour income per efficiency unit: w[(1 - tau) eps + b (1 - eps)]."""
        return self.w * ((1.0 - self.tau) * eps + self.b * (1.0 - eps))


@dataclass(frozen=True)
class IntegrationSpec:
    """Numerical settings for the income density.

    ``n_grid`` equal-spaced log-income nodes are spline-interpolated when
    ``interpolate`` is true; ``n_nodes`` is the Gauss-Legendre count over the
    asset support (default: the asset density's own node count).
    """

    n_grid: int = 200
    n_nodes: int | None = None
    interpolate: bool = True
    width: float = 9.0
    mass_tol: float = 1e-3


# ---------------------------------------------------------------------------
# Household income density
# ---------------------------------------------------------------------------

class IncomeDensity:
    """Density of income iota given employment status, for fixed parameters.

    The continuous-asset part is a Gaussian convolution in log income,
    ``q(u) = int phi((u - log D(a) - mu) / s) / s g(a) da`` with
    ``D(a) = xi + (1 + r) a``; it is tabulated on an equal-spaced log grid and
    cubic-spline interpolated. The point-mass part is evaluated exactly.
    """

    def __init__(self, p: HouseholdMicroParams, eps: int, spec: IntegrationSpec = IntegrationSpec()):
        if eps not in (0, 1):
            raise ValueError("eps must be 0 or 1")
        s = p.sigma_lambda
        if s == 0.0:
            raise ValueError("mu_lambda = 0 makes income degenerate; no density exists")
        mix = p.asset_dist[eps]
        self.xi = p.xi(eps)
        if self.xi <= 0:
            raise ValueError("labour income xi must be positive")
        self.gross = 1.0 + p.r
        self.mu, self.s = p.mu_lambda, s
        self.pi0 = mix.pi0
        self.spec = spec
        cont = mix.cont
        n = spec.n_nodes or cont.n_nodes
        a, wts = gauss_legendre(cont.lo, cont.hi, n)
        self._logD = np.log(self.xi + self.gross * a)
        self._wg = wts * density_at(cont, a)
        lo_u = np.log(self.xi + self.gross * cont.lo) + self.mu - spec.width * s
        hi_u = np.log(self.xi + self.gross * cont.hi) + self.mu + spec.width * s
        self.u_range = (lo_u, hi_u)
        self._spline = None
        if spec.interpolate:
            u = np.linspace(lo_u, hi_u, spec.n_grid)
            spline = interpolate.CubicSpline(u, self._q_cont(u))
            resid = abs(spline.integrate(lo_u, hi_u) - 1.0)
            if not np.isfinite(resid) or resid > spec.mass_tol:
                raise IntegrationError("continuous income component does not integrate to one", resid)
            self._spline = spline

    def _q_cont(self, u):
        """Density of log income from the continuous asset component."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        zc = (u[:, None] - self._logD[None, :] - self.mu) / self.s
        return np.exp(-0.5 * zc ** 2) @ self._wg / (self.s * np.sqrt(2 * np.pi))

    def _q_atom(self, u):
        z0 = (u - np.log(self.xi) - self.mu) / self.s
        return np.exp(-0.5 * z0 ** 2) / (self.s * np.sqrt(2 * np.pi))

    def _q_direct(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.pi0 * self._q_atom(u) + (1.0 - self.pi0) * self._q_cont(u)

    def log_income_pdf(self, u):
        """Density of log income at ``u``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self._spline is None:
            return self._q_direct(u)
        lo, hi = self.u_range
        inside = (u >= lo) & (u <= hi)
        cont = np.empty_like(u)
        cont[inside] = np.clip(self._spline(u[inside]), 0.0, None)
        cont[~inside] = self._q_cont(u[~inside])
        return self.pi0 * self._q_atom(u) + (1.0 - self.pi0) * cont

    def __call__(self, iota):
        iota = np.asarray(iota, dtype=float)
        if np.any(iota <= 0):
            raise ValueError("income must be strictly positive")
        flat = np.atleast_1d(iota)
        val = self.log_income_pdf(np.log(flat)) / flat
        return val.reshape(iota.shape) if iota.ndim else float(val[0])

    def direct(self, iota):
        """Same density without interpolation (testing reference)."""
        iota = np.atleast_1d(np.asarray(iota, dtype=float))
        return self._q_direct(np.log(iota)) / iota


def income_density(p: HouseholdMicroParams, eps: int, iota, grid: IntegrationSpec = IntegrationSpec()):
    """Conditional density of income ``iota`` given employment ``eps``.

    Mixes the point mass at zero assets, ``pi0 f(iota/xi)/xi``, with the
    integral of ``f(iota/D(a))/D(a) g(a)`` over the continuous asset density,
    where ``f`` is the mean-one lognormal density of permanent productivity.
    """
    return IncomeDensity(p, eps, grid)(iota)


def household_logpdf(p: HouseholdMicroParams, eps, iota, spec: IntegrationSpec = IntegrationSpec(),
                     densities: Mapping[int, IncomeDensity] | None = None) -> np.ndarray:
    """Per-record log p(eps, iota) = log P(eps) + log p(iota | eps)."""
    eps = np.asarray(eps).astype(int)
    iota = np.asarray(iota, dtype=float)
    out = np.empty(eps.shape, dtype=float)
    for e in (0, 1):
        sel = eps == e
        if not np.any(sel):
            continue
        dens = densities[e] if densities is not None else IncomeDensity(p, e, spec)
        prob = p.L if e == 1 else 1.0 - p.L
        with np.errstate(divide="ignore"):
            out[sel] = np.log(prob) + np.log(dens(iota[sel]))
    return out


# ---------------------------------------------------------------------------
# Truncation / selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))

    def logpdf(self, y):
        return stats.multivariate_normal(self.mean, self.cov).logpdf(y)

    def pdf(self, y):
        return np.exp(self.logpdf(y))


@dataclass(frozen=True)
class LinearSelection:
    """Record kept iff ``c'y >= threshold``."""

    c: tuple
    threshold: float

    def __call__(self, y):
        return np.asarray(y, dtype=float) @ np.asarray(self.c, dtype=float) >= self.threshold


@dataclass(frozen=True, eq=False)
class TruncatedDensity:
    base: object
    selected: Callable
    mass: float

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        keep = np.asarray(self.selected(y))
        with np.errstate(divide="ignore"):
            return np.where(keep, np.asarray(self.base.logpdf(y)) - np.log(self.mass), -np.inf)

    def pdf(self, y):
        return np.exp(self.logpdf(y))


def gaussian_linear_mass(base: GaussianDensity, sel: LinearSelection) -> float:
    """P(c'Y >= threshold) for Gaussian Y, via the univariate normal CDF."""
    if sel.threshold == -np.inf:
        return 1.0
    c = np.asarray(sel.c, dtype=float)
    mean = float(c @ base.mean)
    sd = float(np.sqrt(c @ base.cov @ c))
    if sd == 0.0:
        return float(mean >= sel.threshold)
    return float(ndtr((mean - sel.threshold) / sd))


def truncated_density(base, selection, mass: float | None = None, *, bounds=None, n_nodes: int = 96):
    """Density of records that pass ``selection``: ``base(y) 1{sel} / P(sel)``.

    The selection probability is closed form for a Gaussian base with a
    linear selection rule; otherwise it must be given as ``mass`` or is
    computed by tensor Gauss-Legendre quadrature over the box ``bounds``
    (a sequence of (lo, hi) per coordinate).
    """
    if mass is None:
        if isinstance(selection, LinearSelection) and isinstance(base, GaussianDensity):
            mass = gaussian_linear_mass(base, selection)
        elif bounds is not None:
            grids = [gauss_legendre(lo, hi, n_nodes) for lo, hi in bounds]
            pts = np.stack(np.meshgrid(*[g[0] for g in grids], indexing="ij"), axis=-1).reshape(-1, len(bounds))
            wts = np.prod(np.stack(np.meshgrid(*[g[1] for g in grids], indexing="ij"), axis=-1), axis=-1).ravel()
            keep = np.asarray(selection(pts), dtype=float)
            mass = float(np.sum(wts * keep * np.exp(base.logpdf(pts))))
        else:
            raise ValueError("selection mass needs a closed form, an explicit mass or quadrature bounds")
    if not mass > 0.0:
        raise ValueError("selection probability is zero")
    return TruncatedDensity(base, selection, float(mass))


@dataclass(frozen=True, eq=False)
class FirmMicroParams:
    """Firm cross section: latent (log productivity, log capital) Gaussian.

    Observed log employment is
    ``n = (log nu + zeta - log w + eps + alpha k) / (1 - nu)``.
    """

    nu: float
    alpha: float
    zeta: float
    log_w: float
    mean: np.ndarray  # (eps, k)
    cov: np.ndarray

    @property
    def shift(self) -> float:
        return np.log(self.nu) + self.zeta - self.log_w

    def observation_gaussian(self) -> GaussianDensity:
        """Joint Gaussian law of the observables (n, k)."""
        M = np.array([[1.0, self.alpha], [0.0, 1.0]]) / np.array([[1 - self.nu], [1.0]])
        c = np.array([self.shift / (1 - self.nu), 0.0])
        mean = M @ np.asarray(self.mean, dtype=float) + c
        return GaussianDensity(mean, M @ np.asarray(self.cov, dtype=float) @ M.T)

    def latent_logpdf(self, n, k):
        """log of (1 - nu) g((1 - nu) n - alpha k - shift, k)."""
        n, k = np.asarray(n, dtype=float), np.asarray(k, dtype=float)
        eps = (1 - self.nu) * n - self.alpha * k - self.shift
        pts = np.stack([eps, k], axis=-1)
        return np.log(1 - self.nu) + stats.multivariate_normal(self.mean, self.cov).logpdf(pts)

    def selection_mass(self, nbar: float) -> float:
        """P(log nu + zeta - log w + eps + alpha k >= (1 - nu) nbar), closed form."""
        c = np.array([1.0, self.alpha])
        mean = self.shift + c @ np.asarray(self.mean, dtype=float)
        sd = np.sqrt(c @ np.asarray(self.cov, dtype=float) @ c)
        return float(ndtr((mean - (1 - self.nu) * nbar) / sd))

    def truncated(self, nbar: float) -> TruncatedDensity:
        return truncated_density(self.observation_gaussian(), LinearSelection((1.0, 0.0), nbar))

    def simulate(self, N: int, seed=None):
        rng = np.random.default_rng(seed)
        s = rng.multivariate_normal(self.mean, self.cov, size=N, method="cholesky")
        n = (self.shift + s[:, 0] + self.alpha * s[:, 1]) / (1 - self.nu)
        return n, s[:, 1]


# ---------------------------------------------------------------------------
# Two-period panel density
# ---------------------------------------------------------------------------

class SavingsPolicy:
    """Tabulated next-period assets a'(a, eps) with monotone interpolation."""

    def __init__(self, grid, values, kind: str = "pchip"):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (2, grid.size):
            raise ValueError("values must have shape (2, len(grid)), one row per eps")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("asset grid must be strictly increasing")
        if np.any(np.diff(values, axis=1) < 0):
            raise ValueError("savings policy must be nondecreasing in assets")
        self.grid, self.values, self.kind = grid, values, kind
        if kind == "pchip":
            self._f = [interpolate.PchipInterpolator(grid, values[e], extrapolate=True) for e in (0, 1)]
        elif kind == "linear":
            self._f = [interpolate.interp1d(grid, values[e], fill_value="extrapolate") for e in (0, 1)]
        else:
            raise ValueError(f"unknown interpolation {kind!r}")

    @classmethod
    def linear(cls, kappa, grid=None, intercept=(0.0, 0.0)):
        """a'(a, eps) = intercept[eps] + kappa[eps] * a."""
        grid = np.linspace(0.0, 50.0, 201) if grid is None else np.asarray(grid, dtype=float)
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (2,))
        vals = np.stack([intercept[e] + kappa[e] * grid for e in (0, 1)])
        return cls(grid, vals, kind="linear")

    def __call__(self, a, eps: int):
        return np.asarray(self._f[int(eps)](a), dtype=float)

    def derivative(self, a, eps: int):
        """Central finite difference with step max(1e-5, 1e-5 |a|)."""
        a = np.asarray(a, dtype=float)
        h = np.maximum(1e-5, 1e-5 * np.abs(a))
        return (self(a + h, eps) - self(a - h, eps)) / (2 * h)


def _panel_pieces(p_prev, p_curr, policy, eps_prev, eps_curr):
    xi1 = p_prev.xi(eps_prev)
    xi2 = p_curr.xi(eps_curr)
    g1 = 1.0 + p_prev.r
    g2 = 1.0 + p_curr.r
    D1 = lambda a: xi1 + g1 * a
    D2 = lambda a: xi2 + g2 * policy(a, eps_prev)
    return xi1, xi2, g1, g2, D1, D2


def panel_two_period_density(p_prev: HouseholdMicroParams, p_curr: HouseholdMicroParams,
                             policy: SavingsPolicy, transition, eps_prev: int, eps_curr: int,
                             iota_prev, iota_curr, n_scan: int = 512) -> np.ndarray:
    """Joint density of two consecutive (eps, iota) observations, continuous-asset part.

    ``iota_prev = lam D1(a)`` and ``iota_curr = lam D2(a)`` with
    ``D1(a) = xi_{t-1} + (1 + r_{t-1}) a`` and
    ``D2(a) = xi_t + (1 + r_t) a'(a, eps_prev)``; the pair is inverted for
    ``(lam, a)`` and the change-of-variables formula is applied, summing over
    all preimages. ``transition[e, e']`` is P(eps_t = e' | eps_{t-1} = e).
    The atom of zero assets contributes only on a ray; see
    :func:`panel_atom_density`.
    """
    iota_prev = np.atleast_1d(np.asarray(iota_prev, dtype=float))
    iota_curr = np.atleast_1d(np.asarray(iota_curr, dtype=float))
    if np.any(iota_prev <= 0) or np.any(iota_curr <= 0):
        raise ValueError("income must be strictly positive")
    iota_prev, iota_curr = np.broadcast_arrays(iota_prev, iota_curr)
    mix = p_prev.asset_dist[eps_prev]
    cont = mix.cont
    xi1, xi2, g1, g2, D1, D2 = _panel_pieces(p_prev, p_curr, policy, eps_prev, eps_curr)

    a_scan = np.linspace(cont.lo, cont.hi, n_scan)
    if np.any(np.diff(policy(a_scan, eps_prev)) <= 0):
        raise ValueError("savings policy must be strictly increasing on the asset support")
    d1s, d2s = D1(a_scan), D2(a_scan)

    ratio = iota_curr.ravel() / iota_prev.ravel()
    out = np.zeros(ratio.size)
    chunk = 2048
    for start in range(0, ratio.size, chunk):
        R = ratio[start:start + chunk]
        h = d2s[None, :] - R[:, None] * d1s[None, :]
        sgn = np.sign(h)
        obs_idx, cell = np.nonzero(sgn[:, :-1] * sgn[:, 1:] < 0)
        exact_o, exact_c = np.nonzero(h == 0.0)
        lo = a_scan[cell].copy()
        hi = a_scan[cell + 1].copy()
        hlo = h[obs_idx, cell]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            hm = D2(mid) - R[obs_idx] * D1(mid)
            left = np.sign(hm) == np.sign(hlo)
            lo = np.where(left, mid, lo)
            hlo = np.where(left, hm, hlo)
            hi = np.where(left, hi, mid)
        roots = np.concatenate([0.5 * (lo + hi), a_scan[exact_c]])
        which = np.concatenate([obs_idx, exact_o])
        if roots.size == 0:
            continue
        gi = start + which
        lam = iota_prev.ravel()[gi] / D1(roots)
        det = lam * (D1(roots) * g2 * policy.derivative(roots, eps_prev) - D2(roots) * g1)
        with np.errstate(divide="ignore", invalid="ignore"):
            contrib = lognormal_pdf(lam, p_prev.mu_lambda, p_prev.sigma_lambda) \
                * density_at(cont, roots) / np.abs(det)
        contrib = np.where(np.isfinite(contrib), contrib, 0.0)
        np.add.at(out, gi, contrib)

    transition = np.asarray(transition, dtype=float)
    p_eps = (p_prev.L if eps_prev == 1 else 1 - p_prev.L) * transition[eps_prev, eps_curr]
    return (p_eps * (1.0 - mix.pi0) * out).reshape(iota_prev.shape)


def panel_atom_density(p_prev: HouseholdMicroParams, p_curr: HouseholdMicroParams,
                       policy: SavingsPolicy, transition, eps_prev: int, eps_curr: int,
                       iota_prev, iota_curr, rtol: float = 1e-9):
    """Line density of the zero-asset atom.

    Households at the constraint produce pairs on the ray
    ``iota_curr / iota_prev = D2(0) / D1(0)``; on that ray the density with
    respect to ``iota_prev`` is ``pi0 f(iota_prev / xi) / xi``. Returns 0 off
    the ray.
    """
    iota_prev = np.asarray(iota_prev, dtype=float)
    iota_curr = np.asarray(iota_curr, dtype=float)
    mix = p_prev.asset_dist[eps_prev]
    xi1, xi2, g1, g2, D1, D2 = _panel_pieces(p_prev, p_curr, policy, eps_prev, eps_curr)
    R0 = float(D2(0.0)) / float(D1(0.0))
    on_ray = np.isclose(iota_curr / iota_prev, R0, rtol=rtol, atol=0.0)
    transition = np.asarray(transition, dtype=float)
    p_eps = (p_prev.L if eps_prev == 1 else 1 - p_prev.L) * transition[eps_prev, eps_curr]
    dens = lognormal_pdf(iota_prev / xi1, p_prev.mu_lambda, p_prev.sigma_lambda) / xi1
    return np.where(on_ray, p_eps * mix.pi0 * dens, 0.0)


def panel_record_logpdf(p_prev: HouseholdMicroParams, p_curr: HouseholdMicroParams,
                        policy: SavingsPolicy, transition, eps_prev, eps_curr,
                        iota_prev, iota_curr, rtol: float = 1e-9) -> np.ndarray:
    """Log density of panel pairs; records on the zero-asset ray use the atom line density."""
    eps_prev = np.asarray(eps_prev).astype(int)
    eps_curr = np.asarray(eps_curr).astype(int)
    iota_prev = np.asarray(iota_prev, dtype=float)
    iota_curr = np.asarray(iota_curr, dtype=float)
    out = np.empty(eps_prev.shape, dtype=float)
    for e0 in (0, 1):
        for e1 in (0, 1):
            sel = (eps_prev == e0) & (eps_curr == e1)
            if not np.any(sel):
                continue
            args = (p_prev, p_curr, policy, transition, e0, e1, iota_prev[sel], iota_curr[sel])
            atom = panel_atom_density(*args, rtol=rtol)
            val = np.where(atom > 0, atom, panel_two_period_density(*args))
            with np.errstate(divide="ignore"):
                out[sel] = np.log(val)
    return out


def simulate_panel_pairs(p_prev: HouseholdMicroParams, p_curr: HouseholdMicroParams,
                         policy: SavingsPolicy, transition, N: int, seed=None) -> dict:
    """Draw N linked (eps, iota) pairs over two consecutive periods."""
    rng = np.random.default_rng(seed)
    first = simulate_cross_section(p_prev, N, rng)
    transition = np.asarray(transition, dtype=float)
    u = rng.random(N)
    eps_curr = (u < transition[first.eps, 1]).astype(int)
    a_next = np.empty(N)
    for e in (0, 1):
        sel = first.eps == e
        a_next[sel] = policy(first.assets[sel], e)
    xi2 = np.where(eps_curr == 1, p_curr.xi(1), p_curr.xi(0))
    iota_curr = first.lam * (xi2 + (1.0 + p_curr.r) * a_next)
    return {"eps_prev": first.eps, "iota_prev": first.iota, "eps": eps_curr, "iota": iota_curr,
            "assets_prev": first.assets}


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------

def sufficient_statistics(y, statistics: Sequence[Callable]) -> np.ndarray:
    """Cross-sectional averages ``(1/N) sum_i m_l(y_i)`` for each statistic."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] < 1:
        raise ValueError("need at least one record")
    return np.array([np.mean(np.asarray(m(y), dtype=float), axis=0) for m in statistics])


# ---------------------------------------------------------------------------
# Simulation and data containers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CrossSection:
    eps: np.ndarray
    iota: np.ndarray
    assets: np.ndarray
    lam: np.ndarray


def simulate_cross_section(p: HouseholdMicroParams, N: int, seed=None) -> CrossSection:
    """Draw N households: eps ~ Bernoulli(L), assets from the mixture, lognormal lambda."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    eps = (rng.random(N) < p.L).astype(int)
    u_atom = rng.random(N)
    u_cont = rng.random(N)
    zl = rng.standard_normal(N)
    assets = np.zeros(N)
    for e in (0, 1):
        sel = eps == e
        mix = p.asset_dist[e]
        draws = expfam_sample(mix.cont, int(sel.sum()), uniforms=u_cont[sel])
        assets[sel] = np.where(u_atom[sel] < mix.pi0, 0.0, draws)
    lam = np.exp(p.mu_lambda + p.sigma_lambda * zl)
    xi = np.where(eps == 1, p.xi(1), p.xi(0))
    iota = lam * (xi + (1.0 + p.r) * assets)
    return CrossSection(eps, iota, assets, lam)


@dataclass(eq=False)
class MicroBlock:
    """All records observed at one time ``t``."""

    t: int
    ids: np.ndarray
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        if np.unique(self.ids).size != self.ids.size:
            raise ValueError(f"duplicate unit ids at t={self.t}")
        for k, v in self.columns.items():
            v = np.asarray(v)
            if v.shape[0] != self.ids.size:
                raise ValueError(f"column {k!r} has wrong length at t={self.t}")
            self.columns[k] = v
        if "t_prev" in self.columns and np.any(self.columns["t_prev"] != self.t - 1):
            raise ValueError(f"panel records at t={self.t} must pair with t-1")

    def __len__(self):
        return self.ids.size

    def __getitem__(self, name):
        return self.columns[name]

    @property
    def is_panel(self) -> bool:
        return "t_prev" in self.columns


@dataclass(eq=False)
class MicroDataset:
    """Repeated cross sections keyed by observation time (1-based)."""

    blocks: dict = field(default_factory=dict)

    @property
    def times(self) -> list[int]:
        return sorted(self.blocks)

    @property
    def sizes(self) -> dict:
        return {t: len(self.blocks[t]) for t in self.times}

    def __iter__(self):
        return (self.blocks[t] for t in self.times)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, t) -> MicroBlock:
        return self.blocks[t]
