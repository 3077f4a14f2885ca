"""Model providers: theta -> state space, micro densities and moment maps.

Two desk-scale providers ship with the package:

* ``LinearGaussianToy``: scalar AR(1) state observed with noise, micro data
  ``y_it ~ N(z_t, sigma_u^2)``. The exact joint likelihood is available, so it
  serves as an oracle.
* ``StylizedHousehold``: heterogeneous-household structure (employment
  states, asset distribution with a borrowing-constraint atom, lognormal
  permanent productivity). The law of motion of the distribution parameters
  is a stand-in supplied by configuration, not the solution of an
  equilibrium model.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .expfam import density_at, fit_coefficients, gauss_legendre
from .microdens import (HouseholdMicroParams, IncomeDensity, IntegrationSpec, MicroBlock,
                        MicroDataset, MixtureAtZero, SavingsPolicy, household_logpdf,
                        panel_record_logpdf, simulate_cross_section)
from .statespace import StateSpaceModel, simulate

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1
CONFIG_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    pass


class OutOfBoxError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Base provider
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentMap:
    """Affine map from states to population moments: ``m = d + Z z``.

    Rows are ordered group-major, orders 1..3 within a group.
    """

    d: np.ndarray
    Z: np.ndarray
    groups: tuple
    max_order: int = 3

    def rows(self, order: int) -> np.ndarray:
        if not 1 <= order <= self.max_order:
            raise ValueError(f"order must be in 1..{self.max_order}")
        return np.array([g * self.max_order + k for g in range(len(self.groups)) for k in range(order)])


class ModelProvider:
    """Maps a free-parameter vector theta to model objects.

    ``calibration`` holds every named parameter; ``free`` lists the names that
    theta fills, in order; ``bounds`` gives the prior box for each free name.
    """

    name = "base"
    micro_columns: tuple = ()
    moment_groups: tuple = ()
    is_linear_gaussian_toy = False

    def __init__(self, calibration: dict, free=(), bounds: dict | None = None):
        self.calibration = dict(calibration)
        self.free = tuple(free)
        unknown = [f for f in self.free if f not in self.calibration]
        if unknown:
            raise ConfigError(f"free parameters not in calibration: {unknown}")
        bounds = bounds or {}
        self.bounds = {k: (float(bounds[k][0]), float(bounds[k][1])) if k in bounds else (-np.inf, np.inf)
                       for k in self.free}

    def params(self, theta=None) -> dict:
        out = dict(self.calibration)
        if theta is None:
            return out
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != len(self.free):
            raise ValueError(f"theta has {theta.size} entries, expected {len(self.free)} ({self.free})")
        for k, v in zip(self.free, theta):
            out[k] = float(v)
        return out

    @property
    def theta0(self) -> np.ndarray:
        return np.array([self.calibration[k] for k in self.free], dtype=float)

    def in_box(self, theta) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return all(lo <= v <= hi for v, (lo, hi) in zip(theta, (self.bounds[k] for k in self.free)))

    def box(self) -> np.ndarray:
        return np.array([self.bounds[k] for k in self.free], dtype=float).reshape(-1, 2)

    # subclasses implement the following
    def state_space(self, theta) -> StateSpaceModel:
        raise NotImplementedError

    def micro_logpdf(self, theta, z_path, t: int, block: MicroBlock) -> np.ndarray:
        raise NotImplementedError

    def simulate_micro(self, theta, z_path, t: int, N: int, seed) -> dict:
        raise NotImplementedError

    def moment_map(self, theta) -> MomentMap:
        raise NotImplementedError(f"provider {self.name!r} declares no affine moment map")

    def group_values(self, block: MicroBlock) -> dict:
        raise NotImplementedError

    def with_free(self, free, bounds=None) -> "ModelProvider":
        """Copy of the provider with a different free-parameter list."""
        new = copy.copy(self)
        ModelProvider.__init__(new, self.calibration, free, bounds if bounds is not None else self.bounds)
        return new


# ---------------------------------------------------------------------------
# Linear Gaussian toy
# ---------------------------------------------------------------------------

TOY_DEFAULTS = {"rho": 0.8, "sigma_zeta": 0.5, "sigma_e": 0.5, "sigma_u": 4.0, "zbar": 0.0}


class LinearGaussianToy(ModelProvider):
    """z_t = rho z_{t-1} + sigma_zeta eps_t, x_t = z_t + e_t, y_it ~ N(z_t, sigma_u^2)."""

    name = "toy"
    micro_columns = ("y",)
    moment_groups = (0,)
    is_linear_gaussian_toy = True

    def __init__(self, calibration=None, free=("rho",), bounds=None):
        cal = dict(TOY_DEFAULTS)
        cal.update(calibration or {})
        super().__init__(cal, free, bounds or {"rho": (-0.99, 0.99)})

    def state_space(self, theta=None) -> StateSpaceModel:
        p = self.params(theta)
        if p["sigma_zeta"] <= 0 or p["sigma_u"] <= 0 or p["sigma_e"] < 0:
            raise ValueError("toy requires sigma_zeta, sigma_u > 0 and sigma_e >= 0")
        return StateSpaceModel([p["zbar"]], [[p["rho"]]], [[p["sigma_zeta"]]], [[1.0]], [p["sigma_e"]])

    def micro_logpdf(self, theta, z_path, t, block):
        p = self.params(theta)
        s = p["sigma_u"]
        y = np.asarray(block["y"], dtype=float)
        z = float(np.asarray(z_path)[t - 1, 0])
        return -0.5 * np.log(2 * np.pi * s * s) - 0.5 * ((y - z) / s) ** 2

    def simulate_micro(self, theta, z_path, t, N, seed):
        p = self.params(theta)
        rng = np.random.default_rng(seed)
        return {"y": float(np.asarray(z_path)[t - 1, 0]) + p["sigma_u"] * rng.standard_normal(N)}

    def moment_map(self, theta=None) -> MomentMap:
        p = self.params(theta)
        d = np.array([0.0, p["sigma_u"] ** 2, 0.0])
        Z = np.array([[1.0], [0.0], [0.0]])
        return MomentMap(d, Z, self.moment_groups)

    def group_values(self, block):
        return {0: np.asarray(block["y"], dtype=float)}


# ---------------------------------------------------------------------------
# Stylized heterogeneous-household provider
# ---------------------------------------------------------------------------

HOUSEHOLD_DEFAULTS = {
    # calibration anchors
    "beta": 0.96, "alpha": 0.36, "delta": 0.10, "rho_zeta": 0.859, "sigma_zeta": 0.014,
    "b": 0.15, "mu_lambda": -0.25, "sigma_e": 0.02, "pi01": 0.5, "pi10": 0.038,
    # stand-in law of motion for the distribution parameters
    "rho_psi": 0.9,
}

# psi per eps: (logit of zero-asset mass, mean, variance, third central moment)
PSI_BAR = (-2.2, 3.0, 3.0, 3.5, -3.9, 4.4, 4.0, 4.0)
PSI_LOADING = (-2.0, 2.0, 1.0, -1.0, -2.0, 3.0, 1.5, -1.0)
PSI_NAMES = ("logit_pi0_u", "m1_u", "m2_u", "m3_u", "logit_pi0_e", "m1_e", "m2_e", "m3_e")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class StylizedHousehold(ModelProvider):
    """Household economy with a configured stand-in law for the distribution.

    States, in order: ``zeta`` (log TFP), the eight distribution parameters
    ``psi`` (for eps = 0 then eps = 1: logit of the zero-asset mass, mean,
    variance and third central moment of continuous assets), then the static
    aggregates ``log Y``, ``log w`` and ``r``.

    Dynamics in deviations from steady state:

        zeta_t = rho_zeta zeta_{t-1} + sigma_zeta eps_t
        psi_t  = rho_psi psi_{t-1} + loading * zeta_t

    Output, wage and interest rate are log-linear in ``zeta`` and aggregate
    capital implied by ``psi`` (Cobb-Douglas with capital share ``alpha``).
    Steady-state prices use the representative-agent relations
    ``r = 1/beta - 1`` and ``w = (1 - alpha) (K/L)^alpha``. The observable is
    log output plus measurement error. The permanent-productivity parameter
    ``mu_lambda`` only enters the micro densities.
    """

    name = "household"
    micro_columns = ("eps", "iota")
    moment_groups = (0, 1)
    n_psi = 8

    def __init__(self, calibration=None, free=("mu_lambda",), bounds=None, *, psi_bar=PSI_BAR,
                 psi_loading=PSI_LOADING, asset_support=(0.0, 30.0), policy: SavingsPolicy | None = None,
                 integration: IntegrationSpec = IntegrationSpec(), n_nodes: int = 128):
        cal = dict(HOUSEHOLD_DEFAULTS)
        cal.update(calibration or {})
        super().__init__(cal, free, bounds or {"mu_lambda": (-1.0, -0.01)})
        self.psi_bar = np.asarray(psi_bar, dtype=float)
        self.psi_loading = np.asarray(psi_loading, dtype=float)
        if self.psi_bar.shape != (8,) or self.psi_loading.shape != (8,):
            raise ConfigError("psi_bar and psi_loading need 8 entries")
        self.asset_support = (float(asset_support[0]), float(asset_support[1]))
        self.policy = policy if policy is not None else SavingsPolicy.linear(
            [0.85, 0.95], np.linspace(self.asset_support[0], self.asset_support[1], 61))
        self.integration = integration
        self.n_nodes = int(n_nodes)
        self._fit = lru_cache(maxsize=4096)(self._fit_uncached)

    # -- steady state and linearized aggregates ---------------------------------
    @staticmethod
    def steady_state(p: dict) -> dict:
        L = p["pi01"] / (p["pi01"] + p["pi10"])
        r = 1.0 / p["beta"] - 1.0
        kl = (p["alpha"] / (r + p["delta"])) ** (1.0 / (1.0 - p["alpha"]))
        w = (1.0 - p["alpha"]) * kl ** p["alpha"]
        Y = kl ** p["alpha"] * L
        tau = p["b"] * (1.0 - L) / L
        return {"L": L, "r": r, "w": w, "Y": Y, "tau": tau}

    def _capital(self, psi, L):
        pi_u, pi_e = _sigmoid(psi[0]), _sigmoid(psi[4])
        return (1 - L) * (1 - pi_u) * psi[1] + L * (1 - pi_e) * psi[5]

    def _capital_gradient(self, L):
        psi = self.psi_bar
        g = np.zeros(8)
        for k, wgt in ((0, 1 - L), (4, L)):
            s = _sigmoid(psi[k])
            g[k] = -wgt * s * (1 - s) * psi[k + 1]
            g[k + 1] = wgt * (1 - s)
        return g / self._capital(psi, L)

    def state_names(self) -> tuple:
        return ("zeta",) + PSI_NAMES + ("logY", "logw", "r")

    def state_space(self, theta=None) -> StateSpaceModel:
        p = self.params(theta)
        ss = self.steady_state(p)
        nc = 1 + self.n_psi
        Ac = np.zeros((nc, nc))
        Ac[0, 0] = p["rho_zeta"]
        Ac[1:, 0] = self.psi_loading * p["rho_zeta"]
        Ac[1:, 1:] = p["rho_psi"] * np.eye(self.n_psi)
        Bc = np.zeros((nc, 1))
        Bc[0, 0] = p["sigma_zeta"]
        Bc[1:, 0] = self.psi_loading * p["sigma_zeta"]
        # static aggregates as functions of current core states
        dk = self._capital_gradient(ss["L"])
        a = p["alpha"]
        G = np.zeros((3, nc))
        G[0, 0], G[0, 1:] = 1.0, a * dk
        G[1, 0], G[1, 1:] = 1.0, a * dk
        G[2, 0], G[2, 1:] = ss["r"] + p["delta"], (ss["r"] + p["delta"]) * (a - 1.0) * dk
        n = nc + 3
        A = np.zeros((n, n))
        A[:nc, :nc] = Ac
        A[nc:, :nc] = G @ Ac
        B = np.vstack([Bc, G @ Bc])
        zbar = np.concatenate([[0.0], self.psi_bar, [np.log(ss["Y"]), np.log(ss["w"]), ss["r"]]])
        S = np.zeros((1, n))
        S[0, nc] = 1.0
        return StateSpaceModel(zbar, A, B, S, [p["sigma_e"]])

    # -- micro side -----------------------------------------------------------
    def _fit_uncached(self, m1, m2, m3):
        return fit_coefficients(3, self.asset_support, m1, (m2, m3), n_nodes=self.n_nodes)

    def asset_mixture(self, psi_e) -> MixtureAtZero:
        psi_e = np.asarray(psi_e, dtype=float)
        cont = self._fit(float(psi_e[1]), float(psi_e[2]), float(psi_e[3]))
        return MixtureAtZero(float(_sigmoid(psi_e[0])), cont)

    def micro_params(self, theta, z) -> HouseholdMicroParams:
        """Cross-section parameters at state vector ``z`` (levels, not deviations)."""
        p = self.params(theta)
        ss = self.steady_state(p)
        z = np.asarray(z, dtype=float)
        psi = z[1:9]
        dist = {0: self.asset_mixture(psi[:4]), 1: self.asset_mixture(psi[4:])}
        return HouseholdMicroParams(w=float(np.exp(z[10])), r=float(z[11]), tau=ss["tau"], b=p["b"],
                                    mu_lambda=p["mu_lambda"], asset_dist=dist, L=ss["L"])

    def transition(self, theta=None) -> np.ndarray:
        p = self.params(theta)
        return np.array([[1 - p["pi01"], p["pi01"]], [p["pi10"], 1 - p["pi10"]]])

    def micro_logpdf(self, theta, z_path, t, block):
        z_path = np.asarray(z_path)
        pc = self.micro_params(theta, z_path[t - 1])
        if block.is_panel:
            if t < 2:
                raise ValueError("panel records need a previous period")
            pp = self.micro_params(theta, z_path[t - 2])
            return panel_record_logpdf(pp, pc, self.policy, self.transition(theta), block["eps_prev"],
                                       block["eps"], block["iota_prev"], block["iota"])
        return household_logpdf(pc, block["eps"], block["iota"], self.integration)

    def income_density(self, theta, z, eps: int) -> IncomeDensity:
        return IncomeDensity(self.micro_params(theta, z), eps, self.integration)

    def simulate_micro(self, theta, z_path, t, N, seed):
        cs = simulate_cross_section(self.micro_params(theta, np.asarray(z_path)[t - 1]), N, seed)
        return {"eps": cs.eps, "iota": cs.iota}

    def population_moments(self, theta, z) -> np.ndarray:
        """Mean, variance and third central moment of income per eps group at state z."""
        mp = self.micro_params(theta, z)
        mu = mp.mu_lambda
        lam_raw = [np.exp(mu * k * (1 - k)) for k in (1, 2, 3)]
        out = []
        for e in (0, 1):
            mix = mp.asset_dist[e]
            xi = mp.xi(e)
            a, w = gauss_legendre(mix.cont.lo, mix.cont.hi, mix.cont.n_nodes)
            g = w * density_at(mix.cont, a)
            D = xi + (1 + mp.r) * a
            raw = [lam_raw[k - 1] * (mix.pi0 * xi ** k + (1 - mix.pi0) * np.sum(g * D ** k)) for k in (1, 2, 3)]
            m1 = raw[0]
            m2 = raw[1] - m1 ** 2
            m3 = raw[2] - 3 * m1 * raw[1] + 2 * m1 ** 3
            out.extend([m1, m2, m3])
        return np.array(out)

    def moment_map(self, theta=None) -> MomentMap:
        """Finite-difference linearization of population moments around the steady state."""
        zbar = self.state_space(theta).zbar
        c0 = self.population_moments(theta, zbar)
        Z = np.zeros((c0.size, zbar.size))
        for i in range(zbar.size):
            h = 1e-5 * max(1.0, abs(zbar[i]))
            up, dn = zbar.copy(), zbar.copy()
            up[i] += h
            dn[i] -= h
            Z[:, i] = (self.population_moments(theta, up) - self.population_moments(theta, dn)) / (2 * h)
        return MomentMap(c0 - Z @ zbar, Z, self.moment_groups)

    def group_values(self, block):
        eps = np.asarray(block["eps"]).astype(int)
        iota = np.asarray(block["iota"], dtype=float)
        return {0: iota[eps == 0], 1: iota[eps == 1]}


# ---------------------------------------------------------------------------
# Joint simulation and exact toy posterior
# ---------------------------------------------------------------------------

def simulate_joint(provider: ModelProvider, theta, T: int, obs_times, N: int, seed):
    """Simulate macro data and repeated cross sections at the realized states.

    Returns ``(z, x, micro)`` with ``z`` (T, n_z), ``x`` (T, n_x) and a
    :class:`MicroDataset`. ``N`` may be an int or a mapping ``t -> N_t``.
    """
    obs_times = sorted(int(t) for t in obs_times)
    if obs_times and (obs_times[0] < 1 or obs_times[-1] > T):
        raise ValueError("observation times must lie in 1..T")
    macro_ss, micro_ss = np.random.SeedSequence(seed).spawn(2)
    z, x = simulate(provider.state_space(theta), T, macro_ss)
    blocks = {}
    for t, child in zip(obs_times, micro_ss.spawn(len(obs_times))):
        n_t = int(N[t]) if isinstance(N, dict) else int(N)
        cols = provider.simulate_micro(theta, z, t, n_t, child)
        blocks[t] = MicroBlock(t, np.arange(1, n_t + 1), cols)
    return z, x, MicroDataset(blocks)


@dataclass(frozen=True)
class GridPosterior:
    points: np.ndarray    # (G,) or (G1, G2, 2)
    logpost: np.ndarray   # log density, normalized by trapezoid rule over the grid
    loglik: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.logpost)

    def mean(self) -> np.ndarray:
        if self.points.ndim == 1:
            return np.array([np.trapezoid(self.points * self.density, self.points)])
        g1, g2 = self.points[:, 0, 0], self.points[0, :, 1]
        d = self.density
        return np.array([np.trapezoid(np.trapezoid(self.points[..., k] * d, g2, axis=1), g1) for k in (0, 1)])

    def sd(self) -> np.ndarray:
        if self.points.ndim != 1:
            raise NotImplementedError("sd for 1-D grids only")
        m = self.mean()[0]
        return np.array([np.sqrt(np.trapezoid((self.points - m) ** 2 * self.density, self.points))])

    def cdf(self, v):
        """Marginal CDF for a 1-D grid (cumulative trapezoid, linear between nodes)."""
        if self.points.ndim != 1:
            raise NotImplementedError("cdf for 1-D grids only")
        d = self.density
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(self.points))])
        cum /= cum[-1]
        return np.interp(v, self.points, cum, left=0.0, right=1.0)


def toy_exact_posterior(provider: LinearGaussianToy, grid, x, micro: MicroDataset, log_prior=None) -> GridPosterior:
    """Grid-normalized exact posterior for 1 or 2 free toy parameters.

    ``grid`` is a 1-D array for one free parameter or a pair of 1-D arrays for
    two. The prior is flat on the grid unless ``log_prior`` is given.
    """
    from .likelihood import exact_joint_loglik_toy

    if not provider.is_linear_gaussian_toy:
        raise TypeError("exact posterior requires the linear Gaussian toy")
    k = len(provider.free)
    if k == 1:
        pts = np.asarray(grid, dtype=float).ravel()
        thetas = pts[:, None]
    elif k == 2:
        g1, g2 = (np.asarray(g, dtype=float).ravel() for g in grid)
        pts = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1)
        thetas = pts.reshape(-1, 2)
    else:
        raise ValueError("toy_exact_posterior supports one or two free parameters")
    ll = np.array([exact_joint_loglik_toy(th, x, micro, provider) for th in thetas])
    lp = ll + (np.array([log_prior(th) for th in thetas]) if log_prior is not None else 0.0)
    lp = lp - np.max(lp)
    if k == 1:
        lp = lp - np.log(np.trapezoid(np.exp(lp), pts))
        return GridPosterior(pts, lp, ll)
    lp = lp.reshape(pts.shape[:2])
    mass = np.trapezoid(np.trapezoid(np.exp(lp), g2, axis=1), g1)
    return GridPosterior(pts, lp - np.log(mass), ll.reshape(pts.shape[:2]))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Read a TOML provider configuration and check its schema version."""
    path = Path(path)
    if not path.exists() and (CONFIG_DIR / path).exists():
        path = CONFIG_DIR / path
    with open(path, "rb") as f:
        cfg = tomllib.load(f)
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema {cfg.get('schema')!r}; expected {SCHEMA_VERSION}")
    if "provider" not in cfg:
        raise ConfigError("config needs a 'provider' entry")
    return cfg


def provider_from_config(cfg: dict) -> ModelProvider:
    kind = cfg["provider"]
    cal = dict(cfg.get("parameters", {}))
    free = tuple(cfg.get("free", {}).get("names", ()))
    bounds = {k: tuple(v) for k, v in cfg.get("bounds", {}).items()}
    missing = [f for f in free if f not in bounds]
    if missing:
        raise ConfigError(f"free parameters without bounds: {missing}")
    if kind == "toy":
        return LinearGaussianToy(cal, free or ("rho",), bounds or None)
    if kind == "household":
        h = cfg.get("household", {})
        kw = {}
        for key in ("psi_bar", "psi_loading", "asset_support", "n_nodes"):
            if key in h:
                kw[key] = h[key]
        support = kw.get("asset_support", (0.0, 30.0))
        if "policy" in h:
            pol = h["policy"]
            grid = np.linspace(support[0], support[1], int(pol.get("n_grid", 61)))
            if "values" in pol:
                kw["policy"] = SavingsPolicy(pol.get("grid", grid), pol["values"], pol.get("kind", "pchip"))
            else:
                kw["policy"] = SavingsPolicy.linear(pol["kappa"], grid, tuple(pol.get("intercept", (0.0, 0.0))))
        if "integration" in cfg:
            kw["integration"] = IntegrationSpec(**cfg["integration"])
        return StylizedHousehold(cal, free or ("mu_lambda",), bounds or None, **kw)
    raise ConfigError(f"unknown provider {kind!r}")


def design_from_config(cfg: dict) -> dict:
    """Simulation design: T, observation times, N and the seed."""
    d = cfg.get("design", {})
    T = int(d.get("T", 100))
    if "obs_times" in d:
        obs = [int(t) for t in d["obs_times"]]
    else:
        every = int(d.get("obs_every", 10))
        obs = list(range(every, T + 1, every))
    return {"T": T, "obs_times": obs, "N": int(d.get("N", 1000)), "seed": int(d.get("seed", 0))}
