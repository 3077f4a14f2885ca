import numpy as np
import pytest
from scipy import integrate

from fullinfo.microdens import MicroDataset, simulate_cross_section
from fullinfo.models import (CONFIG_DIR, ConfigError, LinearGaussianToy, StylizedHousehold, design_from_config,
                             load_config, provider_from_config, simulate_joint, toy_exact_posterior)
from fullinfo.statespace import simulation_smoother_draws


@pytest.fixture(scope="module")
def household():
    return StylizedHousehold()


# -- toy ---------------------------------------------------------------------------------

def test_toy_rho_zero():
    m = LinearGaussianToy().state_space([0.0])
    assert np.array_equal(m.A, [[0.0]])


def test_toy_params_and_errors():
    toy = LinearGaussianToy({"sigma_u": 2.0}, free=("rho", "sigma_u"),
                            bounds={"rho": (-0.9, 0.9), "sigma_u": (0.1, 10)})
    assert toy.params([0.3, 1.5])["sigma_u"] == 1.5
    with pytest.raises(ValueError):
        toy.params([0.3])
    with pytest.raises(ConfigError):
        LinearGaussianToy(free=("nope",))
    with pytest.raises(ValueError):
        LinearGaussianToy({"sigma_u": 0.0}).state_space()


def test_toy_moment_map():
    toy = LinearGaussianToy({"sigma_u": 3.0})
    mm = toy.moment_map()
    assert np.array_equal(mm.d, [0.0, 9.0, 0.0])
    assert list(mm.rows(1)) == [0] and list(mm.rows(3)) == [0, 1, 2]


# -- household ----------------------------------------------------------------------------

def test_household_calibration_defaults(household):
    p = household.params()
    for k, v in {"beta": 0.96, "rho_zeta": 0.859, "sigma_zeta": 0.014, "b": 0.15, "mu_lambda": -0.25,
                 "sigma_e": 0.02, "pi01": 0.5, "pi10": 0.038}.items():
        assert p[k] == v
    ss = household.steady_state(p)
    assert ss["L"] == pytest.approx(0.5 / 0.538)
    assert ss["r"] == pytest.approx(1 / 0.96 - 1)


def test_household_state_space_stable(household):
    m = household.state_space()
    assert max(abs(np.linalg.eigvals(m.A))) < 1
    assert m.n_z == 12 and m.n_x == 1
    assert household.state_names()[0] == "zeta"


def test_household_no_shock_keeps_psi_constant():
    h = StylizedHousehold({"sigma_zeta": 0.0, "sigma_e": 0.0})
    z, _, _ = simulate_joint(h, None, 30, [], 1, 3)
    assert np.allclose(z[:, 1:9], h.psi_bar[None, :], atol=0)


def test_household_macro_invariant_to_mu_lambda(household):
    a = household.state_space([-0.25])
    for mu in (-0.9, -0.5, -0.05):
        b = household.state_space([mu])
        for name in ("zbar", "A", "B", "S", "sigma_e"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_household_micro_density_normalizes_at_smoothed_state(household):
    _, x, _ = simulate_joint(household, None, 30, [], 1, 5)
    draw = simulation_smoother_draws(household.state_space(), x, 1, 9).draws[0]
    z = draw[17]
    for eps in (0, 1):
        dens = household.income_density(None, z, eps)
        u = np.linspace(dens.u_range[0] - 3, dens.u_range[1] + 3, 40_001)
        mass = integrate.simpson(dens.log_income_pdf(u), x=u)
        assert mass == pytest.approx(1.0, abs=1e-4)


def test_household_population_moments_match_simulation(household):
    z = household.state_space().zbar
    pm = household.population_moments(None, z)
    cs = simulate_cross_section(household.micro_params(None, z), 400_000, 4)
    for g in (0, 1):
        v = cs.iota[cs.eps == g]
        assert v.mean() == pytest.approx(pm[3 * g], rel=0.01)
        assert v.var() == pytest.approx(pm[3 * g + 1], rel=0.05)


def test_household_moment_map_linearizes(household):
    mm = household.moment_map()
    zbar = household.state_space().zbar
    assert np.allclose(mm.d + mm.Z @ zbar, household.population_moments(None, zbar), rtol=1e-10)
    # mu_lambda shifts only the micro moments, not the macro matrices
    assert not np.allclose(household.moment_map([-0.5]).d, mm.d)


def test_household_group_values(household):
    _, _, micro = simulate_joint(household, None, 3, [2], 500, 2)
    vals = household.group_values(micro[2])
    assert vals[0].size + vals[1].size == 500


# -- simulate_joint -------------------------------------------------------------------------

def test_simulate_joint_design_shape(household):
    z, x, micro = simulate_joint(household, None, 100, range(10, 101, 10), 1000, 1)
    assert z.shape == (100, 12) and x.shape == (100, 1)
    assert micro.times == list(range(10, 101, 10))
    assert set(micro.sizes.values()) == {1000}


def test_simulate_joint_small_N_and_per_period_sizes():
    toy = LinearGaussianToy()
    _, _, micro = simulate_joint(toy, None, 20, [5, 10], 100, 1)
    assert all(len(b) == 100 for b in micro)
    _, _, micro = simulate_joint(toy, None, 20, [5, 10], {5: 3, 10: 7}, 1)
    assert [len(b) for b in micro] == [3, 7]


def test_simulate_joint_reproducible():
    toy = LinearGaussianToy()
    a = simulate_joint(toy, None, 20, [5, 10], 30, 4)
    b = simulate_joint(toy, None, 20, [5, 10], 30, 4)
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[2][5]["y"], b[2][5]["y"])
    with pytest.raises(ValueError):
        simulate_joint(toy, None, 20, [21], 30, 4)


# -- exact toy posterior ---------------------------------------------------------------------

def test_exact_posterior_symmetric():
    # zbar = 0 and zero data: the likelihood is even in rho
    toy = LinearGaussianToy()
    x = np.zeros((10, 1))
    post = toy_exact_posterior(toy, np.linspace(-0.9, 0.9, 181), x, MicroDataset({}))
    assert np.allclose(post.logpost, post.logpost[::-1], atol=1e-10)
    assert post.mean()[0] == pytest.approx(0.0, abs=1e-10)


def test_exact_posterior_grid_refinement():
    toy = LinearGaussianToy()
    _, x, micro = simulate_joint(toy, None, 20, [5, 10, 15, 20], 50, 2)
    coarse = toy_exact_posterior(toy, np.linspace(-0.99, 0.99, 400), x, micro)
    fine = toy_exact_posterior(toy, np.linspace(-0.99, 0.99, 800), x, micro)
    assert abs(coarse.mean()[0] - fine.mean()[0]) < 1e-3
    assert abs(coarse.sd() - fine.sd()) < 1e-3
    assert coarse.cdf(0.99) == pytest.approx(1.0)


def test_exact_posterior_two_parameters():
    toy = LinearGaussianToy(free=("rho", "sigma_u"), bounds={"rho": (-0.9, 0.9), "sigma_u": (1, 8)})
    _, x, micro = simulate_joint(toy, [0.8, 4.0], 20, [5, 10, 15, 20], 50, 2)
    post = toy_exact_posterior(toy, (np.linspace(-0.9, 0.9, 37), np.linspace(1, 8, 29)), x, micro)
    assert post.logpost.shape == (37, 29)
    assert np.all(np.isfinite(post.mean()))
    with pytest.raises(TypeError):
        toy_exact_posterior(StylizedHousehold(), np.linspace(-1, 0, 3), x, micro)


# -- configuration ----------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["toy.toml", "household.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(name)
    prov = provider_from_config(cfg)
    des = design_from_config(cfg)
    assert prov.name == cfg["provider"]
    assert all(1 <= t <= des["T"] for t in des["obs_times"])
    assert np.all(np.isfinite(prov.box()))


def test_household_config_design():
    des = design_from_config(load_config(CONFIG_DIR / "household.toml"))
    assert des["T"] == 100 and des["obs_times"] == list(range(10, 101, 10)) and des["N"] == 1000


def test_config_schema_errors(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('schema = 2\nprovider = "toy"\n')
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("schema = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text('schema = 1\nprovider = "firm"\n')
    with pytest.raises(ConfigError):
        provider_from_config(load_config(p))
    p.write_text('schema = 1\nprovider = "toy"\n[free]\nnames = ["sigma_u"]\n')
    with pytest.raises(ConfigError):
        provider_from_config(load_config(p))
