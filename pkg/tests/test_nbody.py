import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlim.fields import ComplexField, ConfigurationError, GridSpec, PhysicalParams, VProfile
from modlim.nbody import (
    NBodyWaveFunction, conservation_identities, load_checkpoint, marginals, nbody_energy,
    product_state, propagate, save_checkpoint, symmetrize, two_body_energy_diagnostic,
)
from modlim.nls import WaveFunction, solve_nls
from modlim.scattering import solve_scattering

FREE = VProfile(6.0, 0.0)


def packet(x, c, v, s=1.0, hbar=1.0):
    return np.exp(-(x - c) ** 2 / (2 * s * s) + 1j * v * x / hbar)


def toy_params(kappa=0.0, v=None, hbar=1.0, n=2):
    v = VProfile.normalized(4.0, 1) if v is None else v
    return PhysicalParams(n, hbar, 0.5, kappa=kappa, v_profile=v, dim=1)


def toy_state(kappa=0.0, v=None):
    g = GridSpec(1, 128, 16.0)
    (x,) = g.coords()
    p = toy_params(kappa, v)
    return product_state([packet(x, 6, 0.8), packet(x, 10, -0.8)], p, g)


def test_normalisation_and_symmetry_enforced():
    g = GridSpec(1, 16, 2 * np.pi)
    p = toy_params(v=FREE)
    (x,) = g.coords()
    psi = np.outer(np.exp(np.sin(x)), np.ones(16)).astype(complex)
    psi /= np.sqrt(g.cell_volume ** 2 * np.sum(np.abs(psi) ** 2))
    with pytest.raises(ConfigurationError, match="symmetric"):
        NBodyWaveFunction(psi, p, g)
    with pytest.raises(ConfigurationError, match="norm"):
        NBodyWaveFunction(2 * symmetrize(psi, 2, 1), p, g)


def test_memory_guard():
    g = GridSpec(3, 32, 1.0)
    p = PhysicalParams(2, 1.0, 0.5, v_profile=FREE)
    with pytest.raises(ConfigurationError, match="memory"):
        product_state([np.ones(g.shape)], p, g)


def test_unresolved_interaction_rejected():
    g = GridSpec(1, 32, 16.0)
    wf = product_state([np.ones(32)], toy_params(), g)
    with pytest.raises(ConfigurationError, match="unresolved"):
        propagate(wf, 0.1, 0.05)


def test_free_factorisation_matches_one_body_solver():
    g = GridSpec(1, 64, 20.0)
    (x,) = g.coords()
    p = toy_params(v=FREE)
    orb = packet(x, 10.0, 0.5)
    orb = orb / np.sqrt(g.cell_volume * np.sum(np.abs(orb) ** 2))
    wf = product_state([orb], p, g)
    tr = propagate(wf, 1.0, 0.05, save_every=100)
    one = solve_nls(WaveFunction(ComplexField(g, orb), 1.0), p, 1.0, 0.05, save_every=100)
    phi = one.final.psi.samples
    assert np.max(np.abs(tr.final.psi - np.outer(phi, phi))) < 1e-10
    m = marginals(tr.final)
    assert np.allclose(m.rho2, np.outer(np.abs(phi) ** 2, np.abs(phi) ** 2), atol=1e-12, rtol=0)


def test_centre_of_mass_moves_freely():
    # internal forces cancel pairwise, so <x_1>(t) = <x_1>(0) + t int J^(1)
    wf = toy_state(kappa=1.0)
    g = wf.grid
    (x,) = g.coords()
    tr = propagate(wf, 1.0, 0.01, save_every=25)
    p_cm = tr.total_momentum[0, 0]
    for t, s in zip(tr.times, tr.states):
        mean = g.cell_volume * np.sum(x * marginals(s, with_gamma=False).rho1.samples)
        assert mean == pytest.approx(8.0 + p_cm * t, abs=1e-9)
    # the collision is genuinely interacting: relative motion departs from free flight
    free = propagate(toy_state(kappa=0.0, v=FREE), 1.0, 0.01, save_every=100)
    assert np.max(np.abs(tr.final.psi - free.final.psi)) > 1e-3


def test_energy_conserved_to_second_order():
    wf = toy_state(kappa=1.0)
    drift = [np.ptp(propagate(wf, 0.4, dt).energy) for dt in (0.02, 0.01)]
    assert drift[0] / drift[1] >= 3.5
    assert propagate(wf, 0.4, 0.01).mass == pytest.approx(1.0, abs=1e-12)


def test_product_state_marginals():
    g = GridSpec(1, 32, 2 * np.pi)
    (x,) = g.coords()
    phi = np.exp(np.cos(x) + 1j * np.sin(2 * x))
    phi /= np.sqrt(g.cell_volume * np.sum(np.abs(phi) ** 2))
    m = marginals(product_state([phi], toy_params(v=FREE), g))
    vec = np.sqrt(g.cell_volume) * phi
    assert np.allclose(m.gamma1, np.outer(vec, vec.conj()), atol=1e-13)
    assert np.allclose(m.rho2, np.outer(np.abs(phi) ** 2, np.abs(phi) ** 2), atol=1e-13)


def test_two_mode_state_has_half_occupations():
    g = GridSpec(1, 32, 2 * np.pi)
    (x,) = g.coords()
    a = np.exp(1j * x)
    b = np.exp(-2j * x)
    m = marginals(product_state([a, b], toy_params(v=FREE), g))
    ev = np.sort(np.linalg.eigvalsh(m.gamma1))[::-1]
    assert ev[:2] == pytest.approx([0.5, 0.5], abs=1e-12)
    assert np.max(np.abs(ev[2:])) < 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), three=st.booleans())
def test_marginal_invariants_random_states(seed, three):
    rng = np.random.default_rng(seed)
    g = GridSpec(1, 8, 1.0)
    n_p = 3 if three else 2
    psi = rng.normal(size=(8,) * n_p) + 1j * rng.normal(size=(8,) * n_p)
    psi = symmetrize(psi, n_p, 1)
    psi /= np.sqrt(g.cell_volume ** n_p * np.sum(np.abs(psi) ** 2))
    m = marginals(NBodyWaveFunction(psi, toy_params(v=FREE, n=n_p), g))
    assert np.trace(m.gamma1).real == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(m.gamma1, m.gamma1.conj().T)
    assert np.linalg.eigvalsh(m.gamma1).min() > -1e-12
    assert m.rho2.min() >= 0
    assert g.cell_volume ** 2 * m.rho2.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(g.cell_volume * m.rho2.sum(axis=1) - m.rho1.samples)) < 1e-10
    assert np.allclose(np.diag(m.gamma1).real / g.cell_volume, m.rho1.samples, atol=1e-12)


def test_free_plane_wave_momentum_constant():
    g = GridSpec(1, 16, 2 * np.pi)
    (x,) = g.coords()
    wf = product_state([np.exp(2j * x)], toy_params(v=FREE), g)
    tr = propagate(wf, 0.3, 0.1)
    js = [marginals(s, with_gamma=False).j1.samples for s in tr.states]
    assert all(np.allclose(j, js[0], atol=1e-13) for j in js)
    assert conservation_identities(tr).momentum < 1e-12


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_conservation_residuals_second_order(kappa):
    wf = toy_state(kappa=kappa)
    reps = [conservation_identities(propagate(wf, 0.2, dt)) for dt in (0.01, 0.005)]
    assert reps[0].continuity / reps[1].continuity >= 3.5
    assert reps[0].momentum / reps[1].momentum >= 3.5
    assert max(r.momentum_drift for r in reps) < 1e-8


def test_two_body_diagnostic_without_interaction():
    g = GridSpec(3, 8, 2.0)
    p = PhysicalParams(2, 3.0, 0.5, v_profile=VProfile(1.0, 0.0))
    xs = g.coords()
    orb = np.exp(-sum((c - 1.0) ** 2 for c in xs) / 0.18)
    wf = product_state([orb], p, g)
    sp = solve_scattering(p)
    assert np.all(sp.w_values == 0)
    rep = two_body_energy_diagnostic(wf, sp)
    assert rep.in_regime
    # (1 + a/2)(1 + b/2) >= (1 + a)(1 + b) / 4 mode by mode
    assert rep.passed and rep.ratio <= 0.25 + 1e-12


def test_two_body_diagnostic_weak_interaction():
    prof = VProfile.normalized(1.0, 3, radius=1.5)
    p = PhysicalParams(2, 4.0, 0.5, v_profile=prof)
    g = GridSpec(3, 16, 4 * p.correlation_length)
    sp = solve_scattering(p)
    xs = g.coords()
    s = g.box_length / 8
    orb = np.exp(-sum((c - 0.5 * g.box_length) ** 2 for c in xs) / (2 * s * s))
    wf = product_state([orb], p, g, correlation=1 - sp.w(g.centered_radius()))
    rep = two_body_energy_diagnostic(wf, sp)
    assert rep.in_regime and rep.passed
    assert 0 < rep.ratio < 1


def test_two_body_regime_flag():
    p = PhysicalParams(2, 1.0, 0.5, v_profile=VProfile.normalized(1.0, 3, radius=0.9))
    g = GridSpec(3, 8, 2 * p.correlation_length)
    wf = product_state([np.ones(g.shape)], p, g)
    rep = two_body_energy_diagnostic(wf, solve_scattering(p))
    assert rep.coupling > 0.1
    assert not rep.in_regime and rep.passed is None


def test_profile_mismatch_rejected():
    p = PhysicalParams(2, 4.0, 0.5, v_profile=VProfile.normalized(1.0, 3, radius=1.5))
    g = GridSpec(3, 8, 2.0)
    wf = product_state([np.ones(g.shape)], p.replace(v_profile=VProfile(1.0, 0.0)), g)
    with pytest.raises(ConfigurationError, match="different parameters"):
        two_body_energy_diagnostic(wf, solve_scattering(p))


def test_checkpoint_round_trip(tmp_path):
    wf = toy_state(kappa=1.0)
    path = tmp_path / "state.bin"
    save_checkpoint(wf, path, time=0.25)
    back, t = load_checkpoint(path)
    assert t == 0.25
    assert np.array_equal(back.psi, wf.psi)
    assert back.params == wf.params and back.grid == wf.grid
    assert nbody_energy(back) == nbody_energy(wf)
