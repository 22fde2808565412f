import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlim.fields import ConfigurationError, GridSpec, PhysicalParams, VProfile
from modlim.scattering import (
    StrongCouplingError, born_approximation, correlation_field, coupling,
    export_profile_csv, bound_constant, solve_scattering, solve_scattering_ode,
    sweep_scattering_bounds, verify_scattering_bounds,
)


def params(n=1024, hbar=0.5, beta=0.5, **kw):
    return PhysicalParams(n, hbar, beta, **kw)


def test_zero_potential_gives_zero_w():
    p = params(v_profile=VProfile(6.0, 0.0))
    prof = solve_scattering(p)
    assert np.all(prof.w_values == 0) and np.all(prof.f_values == 1)
    rep = verify_scattering_bounds(prof)
    assert rep.sup_w == 0 and rep.sup_dw == 0
    g = GridSpec(3, 16, 1.0)
    assert np.all(correlation_field(prof, g).samples == 1.0)


def test_born_limit_matches_direct_quadrature():
    # eps = N^(beta-1) hbar^-2 ~ 1e-3: second Born term is O(eps^2)
    p = params(n=4096, hbar=0.5, beta=0.2)
    eps = coupling(p)
    prof = solve_scattering(p)
    r = prof.radii[::16]
    born = born_approximation(p, r)
    err = np.max(np.abs(prof.w(r) - born))
    assert err < 5 * eps * np.max(born)


def test_two_paths_agree():
    for n, hbar, beta in [(64, 0.25, 0.2), (4096, 0.125, 0.5), (16384, 0.25, 0.8)]:
        p = params(n, hbar, beta)
        a = solve_scattering(p, 1e-10)
        b = solve_scattering_ode(p, 1e-10)
        assert np.max(np.abs(a.w_values - b.w_values)) < 1e-9
        assert a.tail_coefficient == pytest.approx(b.tail_coefficient, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(log_n=st.integers(6, 14), k=st.integers(2, 5), beta=st.sampled_from([0.2, 0.5, 0.8]))
def test_maximum_principle_and_monotone_tail(log_n, k, beta):
    p = params(2**log_n, 2.0**-k, beta)
    try:
        prof = solve_scattering(p)
    except StrongCouplingError:
        return
    assert np.all(prof.w_values >= 0) and np.all(prof.w_values < 1)
    outside = prof.radii >= p.vn_support
    assert np.all(np.diff(prof.w_values[outside]) <= 0)
    assert prof.w_values[-1] < 1.01 * prof.tail_coefficient / prof.radii[-1]


def test_tail_is_coulombic():
    p = params(1024, 0.5, 0.5)
    prof = solve_scattering(p)
    far = prof.radii > 2 * p.vn_support
    rw = prof.radii[far] * prof.w_values[far]
    assert np.ptp(rw) < 1e-12 * rw.mean()
    assert rw.mean() == pytest.approx(prof.tail_coefficient, rel=1e-12)


def test_tail_coefficient_matches_born_scattering_length():
    # weak coupling: c ~ int V_N / (4 pi N hbar^2) = b0 / (4 pi N hbar^2)
    p = params(4096, 1.0, 0.2)
    prof = solve_scattering(p)
    born = p.b0 / (4 * np.pi * p.n_particles * p.hbar**2)
    assert prof.tail_coefficient == pytest.approx(born, rel=3 * coupling(p))


def test_strong_coupling_error():
    with pytest.raises(StrongCouplingError, match="strong-coupling"):
        solve_scattering(params(64, 2.0**-5, 0.5))


def test_scaling_law_weak_coupling():
    p1 = params(4096, 0.25, 0.3)
    p2 = p1.replace(hbar=0.25 * np.sqrt(2.0))
    s1 = solve_scattering(p1).w_values.max()
    s2 = solve_scattering(p2).w_values.max()
    assert s1 / s2 == pytest.approx(2.0, rel=0.1)


def test_bound_sweep_uniform():
    res = sweep_scattering_bounds(params(), [0.2, 0.5], [2**10, 2**12, 2**14], [0.25, 0.125])
    assert len(res["rows"]) >= 5
    assert res["passed"]
    assert res["spread_w"] < 2 and res["spread_dw"] < 2


def test_bound_constant_dominates():
    for n, hbar, beta in [(64, 0.25, 0.2), (16384, 0.25, 0.8)]:
        rep = verify_scattering_bounds(solve_scattering(params(n, hbar, beta)))
        assert rep.within_bound_constant
        assert rep.sup_w <= bound_constant(params())


def test_correlation_field_consistency():
    p = params(256, 0.5, 0.5)
    prof = solve_scattering(p, r_max=2.0)
    L = 2.0
    g = GridSpec(3, 128, L)
    field = correlation_field(prof, g).samples
    assert field[0, 0, 0] == pytest.approx(1 - prof.w(np.array([0.0]))[0], abs=1e-14)
    assert np.all(field > 0) and np.all(field <= 1)
    idx = int(round(L / 4 / g.h))
    assert field[idx, 0, 0] == pytest.approx(1 - prof.tail_coefficient / (L / 4), rel=0.05)
    with pytest.raises(ConfigurationError):
        correlation_field(prof, GridSpec(3, 64, 2.0))


def test_w_derivative_matches_finite_difference():
    p = params(1024, 0.25, 0.5)
    prof = solve_scattering(p)
    r = prof.radii[5:200]
    d = 1e-7 * p.correlation_length
    fd = (prof.w(r + d) - prof.w(r - d)) / (2 * d)
    assert np.allclose(prof.dw_values[5:200], fd, rtol=1e-5, atol=1e-9 * np.abs(fd).max())


def test_csv_export(tmp_path):
    prof = solve_scattering(params())
    path = tmp_path / "w.csv"
    export_profile_csv(prof, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,w,f,ratio_w,ratio_dw"
    assert len(lines) == prof.radii.size + 1
