import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlim.euler import FluidState, solve_euler_poisson
from modlim.fields import (
    ComplexField, ConfigurationError, GridSpec, PhysicalParams, ScalarField, VectorField,
    VProfile, coulomb_convolve, grad,
)
from modlim.modenergy import (
    ConvergenceRecord, energy_identity_check, evolution_terms, export_records_csv, fit_loglog,
    functional_inequality_check, gaussian_gn, gaussian_half, gaussian_machinery, gronwall_check,
    gronwall_uniform, modulated_energy_nbody, modulated_energy_onebody, r_compensation, rate_sweep,
)
from modlim.nbody import product_state, propagate
from modlim.nls import WaveFunction, solve_nls, wkb_initialize

FREE = VProfile(6.0, 0.0)


def smooth_2d(g):
    x, y = g.coords()
    rho = ScalarField(g, (1 + 0.3 * np.cos(x) * np.cos(y)) / g.volume)
    return rho, ScalarField(g, 0.2 * (np.sin(x) + np.cos(y)))


def params_2d(g, hbar=0.2, kappa=0.0):
    return PhysicalParams(10, hbar, 0.5, kappa=kappa, v_profile=VProfile.normalized(g.volume, 2), dim=2)


def toy_fluid(g):
    (x,) = g.coords()
    k = 2 * np.pi / g.box_length
    rho = ScalarField(g, (1 + 0.3 * np.cos(k * x)) / g.box_length)
    return FluidState(rho, VectorField(g, 0.3 * np.sin(k * x)[None]))


def toy_wave(kappa=0.0, v=None):
    g = GridSpec(1, 128, 16.0)
    (x,) = g.coords()
    v = VProfile.normalized(4.0, 1) if v is None else v
    p = PhysicalParams(2, 1.0, 0.5, kappa=kappa, v_profile=v, dim=1)
    pk = [np.exp(-(x - c) ** 2 / 2 + 1j * s * x) for c, s in ((6, 0.8), (10, -0.8))]
    return p, product_state(pk, p, g)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 10**6), hbar=st.floats(0.01, 1.0), beta=st.floats(0.05, 0.95))
def test_compensation_monotone(n, hbar, beta):
    r = r_compensation(n, hbar, beta)
    assert r_compensation(2 * n, hbar, beta) < r
    assert r_compensation(n, hbar / 2, beta) > r
    assert r_compensation(None, hbar, beta) == 0.0


def test_real_state_without_flow_has_gradient_kinetic_energy():
    g = GridSpec(2, 32, 2 * np.pi)
    rho, _ = smooth_2d(g)
    amp = np.sqrt(rho.samples)
    wf = WaveFunction(ComplexField(g, amp.astype(complex)), 0.3)
    fluid = FluidState(rho, VectorField(g, np.zeros((2,) + g.shape)))
    rep = modulated_energy_onebody(wf, fluid, params_2d(g, 0.3))
    assert rep.m_k == pytest.approx(0.09 * grad(ScalarField(g, amp)).norm(2) ** 2, rel=1e-12)
    assert rep.f_delta < 1e-30 and rep.m_total == pytest.approx(rep.m_k, rel=1e-14)


def test_matched_densities_have_no_potential_part():
    g = GridSpec(2, 32, 2 * np.pi)
    rho, s = smooth_2d(g)
    wf = wkb_initialize(rho, s, 0.1)
    rep = modulated_energy_onebody(wf, FluidState(rho, grad(s)), params_2d(g, 0.1, kappa=1.0))
    assert rep.f_delta < 1e-30 and abs(rep.f_c) < 1e-30


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_single_mode_density_mismatch(kappa):
    # rho_psi = rho + eps cos x on a 3D box: one Fourier pair, |k| = 1
    g = GridSpec(3, 8, 2 * np.pi)
    x = g.coords()[0]
    eps = 1e-3
    base = np.full(g.shape, 1 / g.volume)
    psi = np.sqrt(base + eps * np.cos(x)).astype(complex)
    wf = WaveFunction(ComplexField(g, psi), 0.5)
    fluid = FluidState(ScalarField(g, base), VectorField(g, np.zeros((3,) + g.shape)))
    p = PhysicalParams(10, 0.5, 0.5, kappa=kappa, v_profile=VProfile.normalized(2.0, 3))
    rep = modulated_energy_onebody(wf, fluid, p)
    assert rep.f_delta == pytest.approx(2.0 * eps ** 2 * g.volume / 2, rel=1e-12)
    assert rep.f_c == pytest.approx(kappa * 4 * np.pi * eps ** 2 * g.volume / 2, rel=1e-12, abs=1e-30)


def test_wkb_initial_energy_scales_like_hbar_squared():
    g = GridSpec(2, 64, 2 * np.pi)
    rho, s = smooth_2d(g)
    vals = []
    for hbar in (0.2, 0.1, 0.05):
        rep = modulated_energy_onebody(wkb_initialize(rho, s, hbar), FluidState(rho, grad(s)),
                                       params_2d(g, hbar))
        vals.append(rep.m_total / hbar ** 2)
    assert np.ptp(vals) < 1e-10 * vals[0]


def test_factorised_state_self_interaction_deficit():
    p, _ = toy_wave(kappa=1.0, v=FREE)
    g = GridSpec(1, 128, 16.0)
    fluid = toy_fluid(g)
    phi = np.sqrt(fluid.rho.samples).astype(complex)
    wf = product_state([phi], p, g)
    rep = modulated_energy_nbody(wf, fluid)
    rho = fluid.rho
    expected = -0.5 * rho.grid.cell_volume * np.sum(rho.samples * coulomb_convolve(rho).samples)
    assert rep.f_c == pytest.approx(expected, rel=1e-10)
    assert rep.r_compensation == pytest.approx(r_compensation(2, 1.0, 0.5))
    assert rep.m_plus == pytest.approx(rep.m_total + 2 * rep.r_compensation)


def test_nbody_matches_onebody_for_free_product_without_interactions():
    g = GridSpec(1, 64, 2 * np.pi)
    (x,) = g.coords()
    p = PhysicalParams(2, 0.5, 0.5, v_profile=FREE, dim=1)
    orb = np.exp(0.3 * np.cos(x) + 2j * np.sin(x))
    orb /= np.sqrt(g.cell_volume * np.sum(np.abs(orb) ** 2))
    fluid = toy_fluid(g)
    nb = modulated_energy_nbody(product_state([orb], p, g), fluid)
    one = modulated_energy_onebody(WaveFunction(ComplexField(g, orb), 0.5), fluid, p)
    assert nb.m_k == pytest.approx(one.m_k, rel=1e-12)


def test_static_flow_terms_vanish():
    g = GridSpec(2, 32, 2 * np.pi)
    rho, s = smooth_2d(g)
    wf = wkb_initialize(rho, s, 0.2)
    fluid = FluidState(rho, VectorField(g, np.zeros((2,) + g.shape)))
    t = evolution_terms(wf, fluid, params_2d(g, kappa=1.0))
    assert t.kinetic == 0 and t.dispersive == 0 and t.f_delta_dot == 0 and t.f_c_dot == 0
    p, wf2 = toy_wave(kappa=1.0)
    z = FluidState(toy_fluid(wf2.grid).rho, VectorField(wf2.grid, np.zeros((1, 128))))
    t2 = evolution_terms(wf2, z, p)
    assert t2.kinetic == 0 and t2.f_c_dot == 0 and t2.f_delta_dot == 0


def test_grid_mismatch_rejected():
    g = GridSpec(2, 32, 2 * np.pi)
    rho, s = smooth_2d(g)
    g2 = GridSpec(2, 16, 2 * np.pi)
    rho2, s2 = smooth_2d(g2)
    with pytest.raises(ConfigurationError, match="grids"):
        modulated_energy_onebody(wkb_initialize(rho, s, 0.2), FluidState(rho2, grad(s2)), params_2d(g))


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_identity_one_body_second_order(kappa):
    g = GridSpec(2, 32, 2 * np.pi)
    rho, s = smooth_2d(g)
    p = params_2d(g, kappa=kappa)
    res = []
    for dt in (0.01, 0.005):
        tr = solve_nls(wkb_initialize(rho, s, 0.2), p, 0.1, dt)
        fl = solve_euler_poisson(FluidState(rho, grad(s)), p, 0.1, dt)
        res.append(energy_identity_check(tr.states, fl.states, p).residual)
    assert res[0] / res[1] >= 3.5


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_identity_two_body_second_order(kappa):
    p, wf = toy_wave(kappa)
    fluid = toy_fluid(wf.grid)
    checks = []
    for dt in (0.02, 0.01):
        checks.append(energy_identity_check(propagate(wf, 0.4, dt).states,
                                            solve_euler_poisson(fluid, p, 0.4, dt).states, p))
    assert checks[0].residual / checks[1].residual >= 3.8
    assert checks[1].residual < 1e-4 * checks[1].scale


def test_gronwall_constant_state():
    t = np.linspace(0, 1, 11)
    fit = gronwall_check(t, np.full(11, 0.3), 0.1)
    assert fit.constant == 0.0 and fit.holds
    assert gronwall_uniform([fit, gronwall_check(t, np.full(11, 0.5), 0.05)])


def test_gronwall_mismatched_data_dominated_by_initial_value():
    t = np.linspace(0, 1, 11)
    m = 1.0 + 0.5 * t
    fit = gronwall_check(t, m, 0.1)
    assert fit.holds
    # the tightest sample sits where the ratio (1 + t/2)/(1 + 0.01 t) grows fastest
    assert fit.constant == pytest.approx(np.log(1.05 / 1.001) / 0.1, rel=1e-12)


def test_gronwall_input_errors():
    with pytest.raises(ConfigurationError, match="10 samples"):
        gronwall_check(np.arange(5.0), np.ones(5), 0.1)
    t = np.linspace(0, 1, 12)
    t[4] = t[3]
    with pytest.raises(ConfigurationError, match="increasing"):
        gronwall_check(t, np.ones(12), 0.1)


def test_slope_fitter_recovers_power():
    h = 2.0 ** -np.arange(3, 8)
    fit = fit_loglog(h, 0.7 * h ** 2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12) and fit.r_squared == pytest.approx(1.0)


def test_small_rate_sweep(tmp_path):
    g = GridSpec(2, 64, 2 * np.pi)
    rho, s = smooth_2d(g)
    p = params_2d(g)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = rate_sweep(rho, s, p, [0.2, 0.1, 0.001], t_end=0.2, euler_dt=0.002, samples=10)
    assert res.excluded == [0.001] and any("under-resolved" in str(w.message) for w in caught)
    assert [r.hbar for r in res.records] == [0.2, 0.1]
    for h, (times, m_plus) in res.energies.items():
        assert len(times) == 11 and m_plus[0] == pytest.approx(res.records[0].m0 * h ** 2 / 0.04)
    ratio = res.records[0].err_mass_l2_sq / res.records[1].err_mass_l2_sq
    assert ratio >= 3.5  # at least the hbar^2 rate when hbar is halved
    path = tmp_path / "rec.csv"
    export_records_csv(res.records, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(ConvergenceRecord.__dataclass_fields__)
    assert len(lines) == 3


def test_gaussian_machinery_passes():
    rep = gaussian_machinery(1024, 0.3, GridSpec(3, 128, 2.0), trials=100)
    assert rep.passed
    assert rep.convolution_error <= 1e-10 and rep.min_quadratic_form >= 0


def test_gaussian_diagonal_value():
    assert float(gaussian_gn(0.0, 1024, 0.3)) / 1024 == pytest.approx(1024 ** -0.1 * np.pi ** -1.5,
                                                                      rel=1e-14)


def test_gaussian_half_width_normalised():
    # the half-variance Gaussian integrates to one on a fine radial quadrature
    r = np.linspace(0, 3, 30001)
    vals = 4 * np.pi * r ** 2 * gaussian_half(r ** 2, 64, 0.3)
    assert np.trapezoid(vals, r) == pytest.approx(1.0, abs=1e-10)


def test_unresolved_mollifier_rejected():
    with pytest.raises(ConfigurationError, match="unresolved"):
        gaussian_machinery(1024, 0.3, GridSpec(3, 16, 2.0))


def test_functional_inequality_without_flow():
    rep = functional_inequality_check([0.3, 0.2, 0.5], [0.0, 0.0, 0.0], r=1.0)
    assert rep.c1 == 0.0 and rep.c2 == 0.0


def test_functional_inequality_linear_programme():
    f = np.array([1.0, 2.0, -0.5])
    fd = np.array([2.0, 4.0, 0.1])
    rep = functional_inequality_check(f, fd, r=0.1)
    # binding rows: c2 >= 1 + 5 c1 (negative F) and 2 c1 + 0.1 c2 >= 4, so c1 = 1.56, c2 = 8.8
    assert rep.c1 == pytest.approx(1.56) and rep.c2 == pytest.approx(8.8)
    assert rep.lower_c2 == pytest.approx(5.0)
    assert np.all(fd <= rep.c1 * f + rep.c2 * 0.1 + 1e-9)


def test_functional_inequality_on_toy_run():
    p, wf = toy_wave()
    fluid = toy_fluid(wf.grid)
    tr = propagate(wf, 0.4, 0.02, save_every=5)
    fl = solve_euler_poisson(fluid, p, 0.4, 0.02, save_every=5)
    reps = [modulated_energy_nbody(s, f, with_terms=True) for s, f in zip(tr.states, fl.states)]
    fc = functional_inequality_check([r.f_delta for r in reps], [r.f_delta_dot for r in reps],
                                     reps[0].r_compensation)
    assert np.isfinite(fc.c1) and fc.c1 >= 0 and fc.c2 >= fc.lower_c2 - 1e-12
