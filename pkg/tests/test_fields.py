import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from modlim.fields import (
    ConfigurationError, GridSpec, ScalarField, ComplexField, VectorField,
    VProfile, PhysicalParams, forward_transform, inverse_transform,
    spectral_norm, sobolev_apply, grad, div, laplacian, coulomb_convolve,
    sample_vn, vn_multiplier, dealias_mask,
)


def band_limited(grid, rng, kcut=4, complex_=False):
    coeffs = np.zeros(grid.shape, dtype=complex)
    idx = np.fft.fftfreq(grid.points_per_axis, 1.0 / grid.points_per_axis)
    mask = np.ones(grid.shape, dtype=bool)
    for ax in np.meshgrid(*([idx] * grid.dim), indexing="ij"):
        mask &= np.abs(ax) <= kcut
    coeffs[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    f = np.fft.ifftn(coeffs) * grid.size
    return f if complex_ else f.real


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        GridSpec(2, 48, 1.0)
    with pytest.raises(ConfigurationError):
        GridSpec(4, 16, 1.0)
    with pytest.raises(ConfigurationError):
        GridSpec(1, 16, 0.0)
    g = GridSpec(2, 16, 2.0)
    assert g.h == pytest.approx(0.125)
    with pytest.raises(ConfigurationError):
        ScalarField(g, np.zeros(10))


def test_constant_field_energy_in_zero_mode():
    g = GridSpec(2, 16, 3.0)
    c = forward_transform(ScalarField(g, np.ones(g.shape)))
    assert c[0, 0] == pytest.approx(1.0)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-15


def test_plane_wave_single_coefficient():
    g = GridSpec(1, 32, 5.0)
    (x,) = g.coords()
    c = forward_transform(ComplexField(g, np.exp(2j * np.pi * x / g.box_length)))
    assert abs(c[1] - 1.0) < 1e-13
    c[1] = 0
    assert np.abs(c).max() < 1e-13


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([1, 2, 3]))
def test_round_trip_and_parseval(seed, dim):
    rng = np.random.default_rng(seed)
    g = GridSpec(dim, 8 if dim == 3 else 32, 1.0 + rng.random())
    f = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    field = ComplexField(g, f)
    c = forward_transform(field)
    back = inverse_transform(c, g).samples
    assert np.max(np.abs(back - f)) < 1e-12 * np.max(np.abs(f))
    assert spectral_norm(c, g) == pytest.approx(field.norm(2), rel=1e-12)


def test_sobolev_identity_and_eigenfunction():
    g = GridSpec(2, 32, 2 * np.pi)
    x, y = g.coords()
    f = np.cos(3 * x + 2 * y)
    assert np.allclose(sobolev_apply(ScalarField(g, f), 0.0).samples, f)
    out = sobolev_apply(ScalarField(g, f), 2.0).samples
    assert np.allclose(out, (1 + 13) * f, atol=1e-11)
    with pytest.raises(ConfigurationError):
        sobolev_apply(ScalarField(g, f), -1.0)


def test_sobolev_gaussian_matches_gradient_path():
    g = GridSpec(3, 32, 12.0)
    x = g.centered_coords()
    f = ScalarField(g, np.exp(-sum(c * c for c in x)))
    lhs = sobolev_apply(f, 1.0).norm(2) ** 2
    rhs = f.norm(2) ** 2 + grad(f).norm(2) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_derivative_of_sine():
    g = GridSpec(1, 64, 3.0)
    (x,) = g.coords()
    L = g.box_length
    d = grad(ScalarField(g, np.sin(2 * np.pi * x / L))).samples[0]
    assert np.max(np.abs(d - 2 * np.pi / L * np.cos(2 * np.pi * x / L))) < 1e-12
    assert np.max(np.abs(grad(ScalarField(g, np.full(g.shape, 4.0))).samples)) < 1e-14


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([1, 2, 3]))
def test_integration_by_parts(seed, dim):
    rng = np.random.default_rng(seed)
    g = GridSpec(dim, 16, 2.0)
    f = ScalarField(g, band_limited(g, rng))
    v = VectorField(g, np.stack([band_limited(g, rng) for _ in range(dim)]))
    lhs = g.cell_volume * np.sum(grad(f).samples * v.samples)
    rhs = -g.cell_volume * np.sum(f.samples * div(v).samples)
    scale = f.norm(2) * v.norm(2) * 10
    assert abs(lhs - rhs) < 1e-10 * scale
    dd = div(grad(f)).samples
    assert np.max(np.abs(dd - laplacian(f).samples)) < 1e-10 * np.max(np.abs(dd))


def test_coulomb_constant_and_mode():
    g = GridSpec(3, 16, 2.0)
    assert np.max(np.abs(coulomb_convolve(ScalarField(g, np.ones(g.shape))).samples)) == 0.0
    x = g.coords()[0]
    k = 2 * np.pi / g.box_length
    out = coulomb_convolve(ScalarField(g, np.cos(k * x))).samples
    assert np.allclose(out, 4 * np.pi / k**2 * np.cos(k * x), atol=1e-12)


def test_coulomb_zero_mean_toy_dims():
    rng = np.random.default_rng(3)
    for dim in (1, 2, 3):
        g = GridSpec(dim, 16, 4.0)
        out = coulomb_convolve(ScalarField(g, rng.random(g.shape)))
        assert abs(out.mean()) < 1e-14 * np.max(np.abs(out.samples))


def _neutral_blob(r, s1=0.35, s2=0.7):
    """Difference of two unit-mass Gaussians; numerically supported in r < 4."""
    g1 = np.exp(-(r / s1) ** 2) / (np.pi * s1 * s1) ** 1.5
    g2 = np.exp(-(r / s2) ** 2) / (np.pi * s2 * s2) ** 1.5
    return g1 - g2


def _blob_potential(r, s1=0.35, s2=0.7):
    r = np.asarray(r, dtype=float)
    safe = np.where(r > 0, r, 1.0)
    val = (special.erf(safe / s1) - special.erf(safe / s2)) / safe
    centre = 2 / np.sqrt(np.pi) * (1 / s1 - 1 / s2)
    return np.where(r > 0, val, centre)


def test_coulomb_blob_matches_free_space_potential():
    g = GridSpec(3, 64, 8.0)
    r = g.centered_radius()
    out = coulomb_convolve(ScalarField(g, _neutral_blob(r))).samples
    free = _blob_potential(r)
    free = free - free.mean()
    assert np.max(np.abs(out - free)) < 1e-4 * np.max(np.abs(free))


def test_coulomb_box_doubling():
    diffs = []
    for L, n in [(8.0, 64), (16.0, 128)]:
        g = GridSpec(3, n, L)
        out = coulomb_convolve(ScalarField(g, _neutral_blob(g.centered_radius()))).samples
        # potential differences are insensitive to the mean-zero shift
        diffs.append(out[0, 0, 0] - out[int(3.0 / g.h), 0, 0])
    assert abs(diffs[0] - diffs[1]) < 1e-6 * abs(diffs[1])


def test_toy_coulomb_matches_direct_periodic_sum():
    g = GridSpec(1, 32, 10.0)
    rng = np.random.default_rng(0)
    rho = rng.random(g.shape)
    a = 0.7
    out = coulomb_convolve(ScalarField(g, rho), softening=a).samples
    x = g.axis()
    direct = np.zeros(g.shape)
    for i in range(g.points_per_axis):
        d = x[i] - x
        d = d - g.box_length * np.round(d / g.box_length)
        direct[i] = g.h * np.sum(rho / np.sqrt(d * d + a * a))
    direct -= direct.mean()
    assert np.allclose(out, direct, atol=1e-12)


def test_profile_integral_and_params():
    v = VProfile.normalized(2.5, 3)
    assert v.integral(3) == pytest.approx(2.5, rel=1e-13)
    assert v.integral_adaptive(3) == pytest.approx(2.5, rel=1e-10)
    p = PhysicalParams(10, 0.5, 0.5, v_profile=v)
    assert p.b0 == pytest.approx(2.5, rel=1e-13)
    PhysicalParams(10, 0.5, 0.5, v_profile=v, b0=2.5)
    with pytest.raises(ConfigurationError):
        PhysicalParams(10, 0.5, 0.5, v_profile=v, b0=2.6)
    for bad in [dict(beta=1.0), dict(beta=0.0), dict(eta=0.34), dict(n_particles=1),
                dict(hbar=0.0), dict(kappa=-1.0)]:
        kw = dict(n_particles=10, hbar=0.5, beta=0.5)
        kw.update(bad)
        with pytest.raises(ConfigurationError):
            PhysicalParams(**kw)


def test_profile_derivative_matches_finite_difference():
    v = VProfile(2.0, 3.0)
    r = np.linspace(0.05, 1.95, 40)
    fd = (v.value(r + 1e-6) - v.value(r - 1e-6)) / 2e-6
    assert np.allclose(v.derivative(r), fd, atol=1e-7)


@pytest.mark.parametrize("dim,n,sweep", [
    (1, 1024, [200, 1000, 10000, 65536]),
    (2, 256, [200, 1000, 4096]),
    (3, 64, [150, 200, 256]),
])
def test_vn_quadrature_resolvability(dim, n, sweep):
    g = GridSpec(dim, n, 1.0)
    v = VProfile.normalized(1.0, dim)
    for N in sweep:
        p = PhysicalParams(N, 1.0, 0.5, v_profile=v, dim=dim)
        assert p.correlation_length >= 4 * g.h
        assert sample_vn(p, g).integral() == pytest.approx(1.0, rel=1e-6)


def test_vn_unresolved_raises():
    g = GridSpec(1, 64, 1.0)
    p = PhysicalParams(10**6, 1.0, 0.5, v_profile=VProfile.normalized(1.0, 1), dim=1)
    with pytest.raises(ConfigurationError):
        sample_vn(p, g)


def test_vn_multiplier_matches_fft_of_samples():
    g = GridSpec(2, 128, 4.0)
    # N^-beta = 1/6 >= 4h = 0.125
    p = PhysicalParams(36, 1.0, 0.5, v_profile=VProfile.normalized(1.0, 2), dim=2)
    samp = sample_vn(p, g).samples
    fft = np.fft.fftn(samp).real * g.cell_volume
    assert np.max(np.abs(fft - vn_multiplier(p, g))) < 1e-5


def test_dealias_mask_fraction():
    g = GridSpec(1, 64, 1.0)
    m = dealias_mask(g)
    assert m.sum() == 43
