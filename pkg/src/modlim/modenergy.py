"""Modulated energy between a quantum state and a fluid solution.

For an ``N``-body state ``psi`` and fluid data ``(rho, u)`` the modulated
energy is ``M = M_K + F_delta + F_c`` with

    M_K     = int |(-i hbar grad_1 - u(x_1)) psi|^2 dX
    F_delta = ((N-1)/N) int V_N(x-y) rho2 + b0 int rho^2 - 2 b0 int rho rho1
    F_c     = kappa int V_c(x-y) [((N-1)/N) rho2 + rho(x) rho(y) - 2 rho(x) rho1(y)]

The one-body functions use the ``N -> infinity`` form obtained with
``rho2 = rho_psi (x) rho_psi`` and ``V_N -> b0 delta``, in which both
potential parts are nonnegative quadratic forms in ``rho_psi - rho``.

Time derivatives of ``M`` are never derived analytically here: the identity
for ``dM/dt`` is checked against centred differences of stored energies.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .euler import FluidState, solve_euler_poisson
from .fields import (
    ConfigurationError, GridSpec, PhysicalParams, ScalarField, VectorField,
    coulomb_convolve, coulomb_kernel_samples, coulomb_softening, div, grad, laplacian,
    sample_vn,
)
from .nbody import NBodyWaveFunction, _grad_particle, _pair_lookup, marginals
from .nls import WaveFunction, _grad_complex, observables, solve_nls, wkb_initialize

__all__ = [
    "ModulatedEnergyReport",
    "EvolutionTerms",
    "ConvergenceRecord",
    "IdentityCheck",
    "GronwallFit",
    "SlopeFit",
    "RateSweepResult",
    "GaussianMachineryReport",
    "FunctionalInequalityReport",
    "r_compensation",
    "modulated_energy_onebody",
    "modulated_energy_nbody",
    "modulated_energy",
    "evolution_terms",
    "energy_identity_check",
    "gronwall_check",
    "gronwall_uniform",
    "fit_loglog",
    "rate_sweep",
    "gaussian_g",
    "gaussian_gn",
    "gaussian_half",
    "gaussian_machinery",
    "functional_inequality_check",
    "export_records_csv",
]


@dataclass(frozen=True)
class ModulatedEnergyReport:
    """Parts of the modulated energy at one time.

    ``m_plus = m_total + 2 r_compensation``.  Evolution terms are NaN unless
    requested.
    """

    t: float
    m_k: float
    f_delta: float
    f_c: float
    m_total: float
    r_compensation: float
    m_plus: float
    f_delta_dot: float = float("nan")
    f_c_dot: float = float("nan")


@dataclass(frozen=True)
class EvolutionTerms:
    """Named contributions to ``dM/dt``.

    ``kinetic`` is the symmetric-gradient term, ``dispersive`` the
    ``(hbar^2/2) int Lap(div u) rho1`` term.
    """

    kinetic: float
    dispersive: float
    f_delta_dot: float
    f_c_dot: float

    @property
    def total(self) -> float:
        return self.kinetic + self.dispersive + self.f_delta_dot + self.f_c_dot


@dataclass(frozen=True)
class ConvergenceRecord:
    """Errors of one semiclassical run at the final time.

    ``n_particles = 0`` marks the one-body (``N -> infinity``) limit.
    """

    hbar: float
    n_particles: int
    err_mass_l2_sq: float
    err_momentum_l1: float
    m0: float


def r_compensation(n_particles: Optional[int], hbar: float, beta: float,
                   constant: float = 1.0) -> float:
    """``C (N^(beta-1) hbar^-6 + N^(-beta/3) hbar^-4 + N^(-1/10) hbar^-4)``; zero for ``N = None``."""
    if n_particles is None:
        return 0.0
    n = float(n_particles)
    return constant * (n ** (beta - 1) * hbar ** -6 + n ** (-beta / 3) * hbar ** -4
                       + n ** -0.1 * hbar ** -4)


# ---------------------------------------------------------------------------
# helpers

def _check_pair(grid: GridSpec, fluid: FluidState, time: Optional[float]) -> None:
    if fluid.grid != grid:
        raise ConfigurationError("quantum state and fluid live on different grids")
    if time is not None and abs(time - fluid.time) > 1e-9 * max(1.0, abs(time)):
        raise ConfigurationError(f"time stamps differ: {time} vs fluid {fluid.time}")


def _grad_u(u: VectorField) -> np.ndarray:
    """``D[j, k] = d_j u^k``."""
    d = u.grid.dim
    return np.stack([grad(u.component(k)).samples for k in range(d)], axis=1)


def _coulomb(sigma: np.ndarray, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    return coulomb_convolve(ScalarField(grid, sigma), coulomb_softening(params, grid)).samples


def _dispersive(u: VectorField, rho1: np.ndarray, hbar: float) -> float:
    grid = u.grid
    lap_div = laplacian(div(u)).samples
    return float(0.5 * hbar ** 2 * grid.cell_volume * np.sum(lap_div * rho1))


def _kinetic_term(amps: np.ndarray, du: np.ndarray, cell: float) -> float:
    """``-sum_jk int (d_j u^k + d_k u^j) Re(A_j conj A_k)`` from reduced products."""
    d = du.shape[0]
    total = 0.0
    for j in range(d):
        for k in range(d):
            s = du[j, k] + du[k, j]
            total -= np.sum(s * amps[j, k])
    return float(cell * total)


# ---------------------------------------------------------------------------
# one-body form

def modulated_energy_onebody(wf: WaveFunction, fluid: FluidState, params: PhysicalParams,
                             time: Optional[float] = None, with_terms: bool = False,
                             n_particles: Optional[int] = None) -> ModulatedEnergyReport:
    """Limiting modulated energy of a mean-field wave function.

    Parameters
    ----------
    wf : WaveFunction
    fluid : FluidState
        Must share the grid (and, if ``time`` is given, the time stamp).
    params : PhysicalParams
        Supplies ``b0`` and ``kappa``.
    with_terms : bool
        Also fill ``f_delta_dot`` and ``f_c_dot``.
    n_particles : int, optional
        When given, ``r(N, hbar)`` is reported; by default the limit value 0.
    """
    grid = wf.grid
    _check_pair(grid, fluid, time)
    obs = observables(wf)
    sigma = obs.rho_q.samples - fluid.rho.samples
    cell = grid.cell_volume
    m_k = _modulated_kinetic(wf, fluid.u)
    f_delta = float(params.b0 * cell * np.sum(sigma * sigma))
    f_c = 0.0
    if params.kappa != 0.0:
        f_c = float(params.kappa * cell * np.sum(sigma * _coulomb(sigma, params, grid)))
    r = r_compensation(n_particles, params.hbar, params.beta)
    m_total = m_k + f_delta + f_c
    fd_dot = fc_dot = float("nan")
    if with_terms:
        terms = evolution_terms(wf, fluid, params)
        fd_dot, fc_dot = terms.f_delta_dot, terms.f_c_dot
    return ModulatedEnergyReport(t=fluid.time, m_k=m_k, f_delta=f_delta, f_c=f_c, m_total=m_total,
                                 r_compensation=r, m_plus=m_total + 2 * r,
                                 f_delta_dot=fd_dot, f_c_dot=fc_dot)


def _modulated_kinetic(wf: WaveFunction, u: VectorField) -> float:
    psi = wf.psi.samples
    gp = _grad_complex(psi, wf.grid)
    total = 0.0
    for i, g in enumerate(gp):
        a = -1j * wf.hbar * g - u.samples[i] * psi
        total += np.sum(a.real ** 2 + a.imag ** 2)
    return float(wf.grid.cell_volume * total)


def _onebody_terms(wf: WaveFunction, fluid: FluidState, params: PhysicalParams) -> EvolutionTerms:
    grid = wf.grid
    psi = wf.psi.samples
    u = fluid.u
    d = grid.dim
    gp = _grad_complex(psi, grid)
    amps_vec = [-1j * wf.hbar * gp[j] - u.samples[j] * psi for j in range(d)]
    amps = np.array([[np.real(amps_vec[j] * np.conj(amps_vec[k])) for k in range(d)]
                     for j in range(d)])
    du = _grad_u(u)
    cell = grid.cell_volume
    rho_q = psi.real ** 2 + psi.imag ** 2
    sigma = rho_q - fluid.rho.samples
    div_u = div(u).samples
    kinetic = _kinetic_term(amps, du, cell)
    dispersive = _dispersive(u, rho_q, wf.hbar)
    fd_dot = float(-params.b0 * cell * np.sum(div_u * sigma * sigma))
    fc_dot = 0.0
    if params.kappa != 0.0:
        g_phi = grad(ScalarField(grid, _coulomb(sigma, params, grid))).samples
        fc_dot = float(2.0 * params.kappa * cell * np.sum(sigma * np.sum(u.samples * g_phi, axis=0)))
    return EvolutionTerms(kinetic, dispersive, fd_dot, fc_dot)


# ---------------------------------------------------------------------------
# few-body form

def _pair_integral(kernel: np.ndarray, rho2: np.ndarray, grid: GridSpec) -> float:
    return float(grid.cell_volume ** 2 * np.sum(_pair_lookup(kernel, grid, 2, 0, 1) * rho2))


def _nbody_amplitudes(wf: NBodyWaveFunction, u: VectorField):
    grid = wf.grid
    d = grid.dim
    n_axes = wf.n_particles * d
    gp = _grad_particle(wf.psi, grid, n_axes, 0)
    shape = grid.shape + (1,) * (n_axes - d)
    return [-1j * wf.params.hbar * gp[j] - u.samples[j].reshape(shape) * wf.psi for j in range(d)]


def modulated_energy_nbody(wf: NBodyWaveFunction, fluid: FluidState,
                           time: Optional[float] = None,
                           with_terms: bool = False) -> ModulatedEnergyReport:
    """Modulated energy of a few-body state, by direct quadrature on the pair grid.

    ``F_delta`` uses the sampled ``V_N``; ``F_c`` the periodic Coulomb kernel
    of the one-particle grid.  ``r(N, hbar)`` is evaluated with ``C = 1``.
    """
    params, grid = wf.params, wf.grid
    _check_pair(grid, fluid, time)
    n_p = wf.n_particles
    m = marginals(wf, with_gamma=False)
    rho, rho1 = fluid.rho.samples, m.rho1.samples
    cell = grid.cell_volume
    amps = _nbody_amplitudes(wf, fluid.u)
    m_k = float(wf.cell_volume * sum(np.sum(a.real ** 2 + a.imag ** 2) for a in amps))
    frac = (n_p - 1) / n_p
    f_delta = params.b0 * cell * np.sum(rho * rho - 2 * rho * rho1)
    if not params.v_profile.is_zero:
        f_delta += frac * _pair_integral(sample_vn(params, grid).samples, m.rho2, grid)
    f_c = 0.0
    if params.kappa != 0.0:
        kern = coulomb_kernel_samples(params, grid)
        phi = _coulomb(rho, params, grid)
        f_c = params.kappa * (frac * _pair_integral(kern, m.rho2, grid)
                              + cell * np.sum(rho * phi) - 2 * cell * np.sum(phi * rho1))
    r = r_compensation(n_p, params.hbar, params.beta)
    m_total = m_k + float(f_delta) + float(f_c)
    fd_dot = fc_dot = float("nan")
    if with_terms:
        terms = evolution_terms(wf, fluid, params)
        fd_dot, fc_dot = terms.f_delta_dot, terms.f_c_dot
    return ModulatedEnergyReport(t=fluid.time, m_k=m_k, f_delta=float(f_delta), f_c=float(f_c),
                                 m_total=m_total, r_compensation=r, m_plus=m_total + 2 * r,
                                 f_delta_dot=fd_dot, f_c_dot=fc_dot)


def _spectral_grad_kernel(kern: np.ndarray, grid: GridSpec) -> List[np.ndarray]:
    ks = [k.copy() for k in grid.wavenumbers()]
    for k in ks:
        k[np.isclose(np.abs(k), grid.k_max)] = 0.0
    kh = np.fft.fftn(kern)
    return [np.fft.ifftn(1j * k * kh).real for k in ks]


def _pair_velocity_form(kern: np.ndarray, u: VectorField, weight: np.ndarray,
                        grid: GridSpec) -> float:
    """``int (u(x) - u(y)) . grad K(x - y) weight(x, y) dx dy`` on the pair grid."""
    d = grid.dim
    gk = _spectral_grad_kernel(kern, grid)
    total = 0.0
    for a in range(d):
        ua = u.samples[a]
        du = ua.reshape(grid.shape + (1,) * d) - ua.reshape((1,) * d + grid.shape)
        total += np.sum(du * _pair_lookup(gk[a], grid, 2, 0, 1) * weight)
    return float(grid.cell_volume ** 2 * total)


def _nbody_terms(wf: NBodyWaveFunction, fluid: FluidState, params: PhysicalParams) -> EvolutionTerms:
    grid = wf.grid
    d = grid.dim
    n_p = wf.n_particles
    u = fluid.u
    m = marginals(wf, with_gamma=False)
    rho, rho1 = fluid.rho.samples, m.rho1.samples
    amps_vec = _nbody_amplitudes(wf, u)
    rest = tuple(range(d, n_p * d))
    scale = grid.cell_volume ** (n_p - 1)
    amps = np.array([[scale * np.real(amps_vec[j] * np.conj(amps_vec[k])).sum(axis=rest)
                      for k in range(d)] for j in range(d)])
    cell = grid.cell_volume
    kinetic = _kinetic_term(amps, _grad_u(u), cell)
    dispersive = _dispersive(u, rho1, params.hbar)
    frac = (n_p - 1) / n_p
    div_u = div(u).samples
    fd_dot = -params.b0 * cell * np.sum(div_u * rho * (rho - 2 * rho1))
    if not params.v_profile.is_zero:
        fd_dot += frac * _pair_velocity_form(sample_vn(params, grid).samples, u, m.rho2, grid)
    fc_dot = 0.0
    if params.kappa != 0.0:
        kern = coulomb_kernel_samples(params, grid)
        weight = frac * m.rho2 + np.multiply.outer(rho, rho) - 2 * np.multiply.outer(rho, rho1)
        fc_dot = params.kappa * _pair_velocity_form(kern, u, weight, grid)
    return EvolutionTerms(kinetic, dispersive, float(fd_dot), float(fc_dot))


def modulated_energy(psi, fluid: FluidState, params: Optional[PhysicalParams] = None,
                     **kw) -> ModulatedEnergyReport:
    """Dispatch on the state type."""
    if isinstance(psi, NBodyWaveFunction):
        return modulated_energy_nbody(psi, fluid, **kw)
    if params is None:
        raise ConfigurationError("one-body modulated energy needs params")
    return modulated_energy_onebody(psi, fluid, params, **kw)


def evolution_terms(psi, fluid: FluidState, params: PhysicalParams) -> EvolutionTerms:
    """Assembled right side of the modulated-energy evolution law.

    For few-body states the ``(N-1)/N`` factors are kept as printed; the
    one-body form is their ``N -> infinity`` limit.
    """
    if isinstance(psi, NBodyWaveFunction):
        if psi.n_particles != 2:
            raise ConfigurationError("few-body evolution terms are implemented for N = 2")
        _check_pair(psi.grid, fluid, None)
        return _nbody_terms(psi, fluid, params)
    _check_pair(psi.grid, fluid, None)
    return _onebody_terms(psi, fluid, params)


# ---------------------------------------------------------------------------
# identity check

@dataclass(frozen=True)
class IdentityCheck:
    """Centred ``dM/dt`` against the assembled right side at interior snapshots."""

    times: np.ndarray
    dm_dt: np.ndarray
    rhs: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.dm_dt - self.rhs)))

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.rhs)))


def energy_identity_check(states: Sequence, fluids: Sequence[FluidState],
                          params: PhysicalParams) -> IdentityCheck:
    """Compare centred differences of ``M`` with :func:`evolution_terms`.

    ``states`` and ``fluids`` are equally spaced snapshots at common times.
    """
    if len(states) != len(fluids) or len(states) < 3:
        raise ConfigurationError("need at least three paired snapshots")
    times = np.array([f.time for f in fluids])
    taus = np.diff(times)
    if np.ptp(taus) > 1e-9 * taus.mean():
        raise ConfigurationError("snapshots must be equally spaced")
    tau = taus.mean()
    m = np.array([modulated_energy(s, f, params).m_total for s, f in zip(states, fluids)])
    dm = (m[2:] - m[:-2]) / (2 * tau)
    rhs = np.array([evolution_terms(states[n], fluids[n], params).total
                    for n in range(1, len(states) - 1)])
    return IdentityCheck(times=times[1:-1], dm_dt=dm, rhs=rhs)


# ---------------------------------------------------------------------------
# Gronwall and rate fits

@dataclass(frozen=True)
class GronwallFit:
    """Smallest ``C >= 0`` with ``M+(t) <= exp(C t) (M+(0) + hbar^2 t)`` on the samples."""

    constant: float
    hbar: float
    holds: bool


def gronwall_check(times: Sequence[float], m_plus: Sequence[float], hbar: float) -> GronwallFit:
    """Fit the Gronwall constant of a modulated-energy time series.

    Raises
    ------
    ConfigurationError
        With fewer than 10 samples, a non-increasing time grid, or a
        nonpositive bound ``M+(0) + hbar^2 t``.
    """
    t = np.asarray(times, dtype=float)
    m = np.asarray(m_plus, dtype=float)
    if t.size < 10:
        raise ConfigurationError("Gronwall fit needs at least 10 samples")
    if np.any(np.diff(t) <= 0):
        raise ConfigurationError("time grid must be strictly increasing")
    base = m[0] + hbar ** 2 * (t - t[0])
    if np.any(base <= 0):
        raise ConfigurationError("M+(0) + hbar^2 t must be positive")
    later = t > t[0]
    rates = np.log(np.maximum(m[later], 1e-300) / base[later]) / (t[later] - t[0])
    c = max(0.0, float(rates.max()))
    holds = bool(np.all(m <= np.exp(c * (t - t[0])) * base * (1 + 1e-12)))
    return GronwallFit(constant=c, hbar=hbar, holds=holds)


def gronwall_uniform(fits: Sequence[GronwallFit], factor: float = 2.0) -> bool:
    """True when all fitted constants agree within ``factor``."""
    cs = np.array([f.constant for f in fits])
    if not all(f.holds for f in fits):
        return False
    if cs.max() == 0.0:
        return True
    return bool(cs.max() <= factor * cs.min())


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> SlopeFit:
    """Least-squares line through ``(log x, log y)``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ConfigurationError("slope fit needs at least two points")
    res = stats.linregress(lx, ly)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2))


@dataclass
class RateSweepResult:
    """Output of :func:`rate_sweep`.

    Attributes
    ----------
    records : list of ConvergenceRecord
    mass_fit, momentum_fit : SlopeFit
        Log-log fits of the errors against ``hbar``.
    gronwall : list of GronwallFit
    energies : dict
        ``hbar -> (times, m_plus)``.
    excluded : list of float
        Values of ``hbar`` dropped by the resolution guard.
    """

    records: List[ConvergenceRecord]
    mass_fit: Optional[SlopeFit]
    momentum_fit: Optional[SlopeFit]
    gronwall: List[GronwallFit]
    energies: Dict[float, tuple] = field(default_factory=dict)
    excluded: List[float] = field(default_factory=list)


def _phase_resolution(fluid_states: Sequence[FluidState], hbar: float) -> float:
    """Largest local wavenumber ``|u| / hbar`` as a fraction of the grid cutoff."""
    grid = fluid_states[0].grid
    umax = max(float(np.max(s.u.magnitude().samples)) for s in fluid_states)
    return umax / hbar / grid.k_max


def rate_sweep(rho_in: ScalarField, s_phase: ScalarField, params: PhysicalParams,
               hbars: Sequence[float], t_end: float, euler_dt: float,
               nls_dt: Optional[Sequence[float]] = None, samples: int = 10,
               order: int = 2, resolution: float = 2.0 / 3.0) -> RateSweepResult:
    """Semiclassical convergence study for WKB data ``sqrt(rho_in) exp(i S / hbar)``.

    The fluid solution is computed once; for each ``hbar`` the mean-field
    equation is solved and the mass and momentum errors at ``t_end`` are
    recorded, together with ``M(t)`` on ``samples + 1`` equally spaced times.

    Parameters
    ----------
    nls_dt : sequence of float, optional
        Time step per ``hbar``; defaults to the largest step not exceeding
        ``0.01 min(1, 8 hbar)`` that divides the sampling interval.
    resolution : float
        A value of ``hbar`` is excluded when ``max |u| / hbar`` exceeds this
        fraction of the grid cutoff wavenumber.
    """
    grid = rho_in.grid
    stride_t = t_end / samples
    save_every = int(round(stride_t / euler_dt))
    if abs(save_every * euler_dt - stride_t) > 1e-9 * stride_t:
        raise ConfigurationError("t_end / samples must be a multiple of euler_dt")
    u0 = grad(s_phase)
    fluid = solve_euler_poisson(FluidState(rho_in, u0), params, t_end, euler_dt,
                                save_every=save_every)
    if fluid.halted:
        raise ConfigurationError(f"fluid run stopped early: {fluid.halted}")
    sample_times = np.array([s.time for s in fluid.states])
    records, fits, energies, excluded = [], [], {}, []
    if nls_dt is None:
        nls_dt = [stride_t / np.ceil(stride_t / (0.01 * min(1.0, 8.0 * h)) - 1e-9) for h in hbars]
    for dt in nls_dt:
        steps = stride_t / dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigurationError(f"time step {dt:g} does not divide the sampling interval")
    for hbar, dt in zip(hbars, nls_dt):
        if _phase_resolution(fluid.states, hbar) > resolution:
            warnings.warn(f"hbar = {hbar:g} is under-resolved on this grid; point excluded")
            excluded.append(float(hbar))
            continue
        p = params.replace(hbar=hbar)
        wf0 = wkb_initialize(rho_in, s_phase, hbar)
        traj = solve_nls(wf0, p, t_end, dt, order=order, save_times=sample_times[1:])
        series = [modulated_energy_onebody(s, f, p, time=t)
                  for s, f, t in zip(traj.states, fluid.states, traj.times)]
        m_plus = np.array([r.m_plus for r in series])
        energies[float(hbar)] = (sample_times.copy(), m_plus)
        fits.append(gronwall_check(sample_times, m_plus, hbar))
        obs = observables(traj.final)
        fin = fluid.final
        d_rho = obs.rho_q.samples - fin.rho.samples
        d_j = obs.j_q.samples - fin.rho.samples[None] * fin.u.samples
        records.append(ConvergenceRecord(
            hbar=float(hbar), n_particles=0,
            err_mass_l2_sq=float(grid.cell_volume * np.sum(d_rho ** 2)),
            err_momentum_l1=float(grid.cell_volume * np.sum(np.sqrt(np.sum(d_j ** 2, axis=0)))),
            m0=float(m_plus[0]),
        ))
    mass_fit = mom_fit = None
    if len(records) >= 2:
        hs = [r.hbar for r in records]
        mass_fit = fit_loglog(hs, [r.err_mass_l2_sq for r in records])
        mom_fit = fit_loglog(hs, [r.err_momentum_l1 for r in records])
    return RateSweepResult(records=records, mass_fit=mass_fit, momentum_fit=mom_fit,
                           gronwall=fits, energies=energies, excluded=excluded)


def export_records_csv(records: Sequence[ConvergenceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(ConvergenceRecord.__dataclass_fields__)
        writer.writerow(names)
        for r in records:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


# ---------------------------------------------------------------------------
# Gaussian mollifier

def gaussian_g(r2, dim: int = 3) -> np.ndarray:
    """``G(x) = pi^(-d/2) exp(-|x|^2)`` as a function of ``|x|^2``."""
    return np.pi ** (-dim / 2.0) * np.exp(-np.asarray(r2, dtype=float))


def gaussian_gn(r2, n_particles: float, eta: float, dim: int = 3) -> np.ndarray:
    """``G_N(x) = N^(d eta) G(N^eta x)``."""
    s = float(n_particles) ** eta
    return s ** dim * gaussian_g(s * s * np.asarray(r2, dtype=float), dim)


def gaussian_half(r2, n_particles: float, eta: float, dim: int = 3) -> np.ndarray:
    """``G_{0,N}`` with ``G_{0,N} * G_{0,N} = G_N``: the Gaussian of half the variance."""
    s2 = 2.0 * float(n_particles) ** (2 * eta)
    return (s2 / np.pi) ** (dim / 2.0) * np.exp(-s2 * np.asarray(r2, dtype=float))


@dataclass(frozen=True)
class GaussianMachineryReport:
    """Checks of the mollifier identities.

    ``integral_error`` is ``|h^d sum G_N - 1|``; ``convolution_error`` the sup
    difference between ``G_{0,N} * G_{0,N}`` (spectral product) and ``G_N``;
    ``min_quadratic_form`` the smallest ``int int G_N dmu dmu`` over the random
    mean-zero signed measures; ``diagonal_error`` the relative difference of
    ``G_N(0)/N`` from ``N^(3 eta - 1) pi^(-3/2)``.
    """

    integral_error: float
    centre_error: float
    convolution_error: float
    min_quadratic_form: float
    diagonal_error: float
    trials: int
    passed: bool


def gaussian_machinery(n_particles: float, eta: float, grid: GridSpec, trials: int = 100,
                       seed: int = 0, points: int = 24) -> GaussianMachineryReport:
    """Verify normalisation, the half-width convolution identity and positivity.

    Raises
    ------
    ConfigurationError
        If ``N**(-eta)`` is below four grid spacings or the grid is not 3D.
    """
    if grid.dim != 3:
        raise ConfigurationError("the Gaussian mollifier is defined in three dimensions")
    width = float(n_particles) ** (-eta)
    if width < 4.0 * grid.h:
        raise ConfigurationError(f"mollifier scale {width:.3g} unresolved (h = {grid.h:.3g})")
    r2 = grid.centered_radius() ** 2
    gn = gaussian_gn(r2, n_particles, eta)
    g0 = gaussian_half(r2, n_particles, eta)
    integral_error = abs(grid.cell_volume * gn.sum() - 1.0)
    centre_error = abs(float(gaussian_g(0.0)) - np.pi ** -1.5)
    conv = np.fft.ifftn(np.fft.fftn(g0) ** 2).real * grid.cell_volume
    conv_error = float(np.max(np.abs(conv - gn)))
    rng = np.random.default_rng(seed)
    forms = []
    for trial in range(trials):
        x = rng.uniform(0.0, grid.box_length, size=(points, 3))
        if trial % 2 == 0:
            a = rng.normal(size=points)
            a -= a.mean()
        else:
            a = np.where(np.arange(points) < points // 2, 1.0, -1.0) / (points // 2)
        d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
        forms.append(float(a @ gaussian_gn(d2, n_particles, eta) @ a))
    diag = float(gaussian_gn(0.0, n_particles, eta)) / n_particles
    exact = float(n_particles) ** (3 * eta - 1) * np.pi ** -1.5
    diag_error = abs(diag - exact) / exact
    min_form = min(forms)
    passed = (integral_error <= 1e-12 and centre_error <= 1e-12 and conv_error <= 1e-10
              and min_form >= -1e-12 and diag_error <= 1e-12)
    return GaussianMachineryReport(integral_error, centre_error, conv_error, min_form,
                                   diag_error, trials, bool(passed))


# ---------------------------------------------------------------------------
# functional inequality constants

@dataclass(frozen=True)
class FunctionalInequalityReport:
    """Smallest ``c1, c2 >= 0`` with ``dF <= c1 F + c2 r`` and ``F >= -c2 r`` on a run."""

    c1: float
    c2: float
    lower_c2: float
    samples: int


def functional_inequality_check(f_delta: Sequence[float], f_delta_dot: Sequence[float],
                                r: float) -> FunctionalInequalityReport:
    """Empirical constants of the ``F_delta`` functional inequality.

    Minimises ``c1 + c2`` subject to the sampled constraints (a small linear
    programme).
    """
    f = np.asarray(f_delta, dtype=float)
    fd = np.asarray(f_delta_dot, dtype=float)
    if f.shape != fd.shape or f.size == 0:
        raise ConfigurationError("need matching nonempty series")
    if not r > 0:
        raise ConfigurationError("compensation r must be positive")
    a_ub = np.concatenate([np.stack([-f, -np.full_like(f, r)], axis=1),
                           np.stack([np.zeros_like(f), -np.full_like(f, r)], axis=1)])
    b_ub = np.concatenate([-fd, f])
    res = optimize.linprog([1.0, 1.0], A_ub=a_ub, b_ub=b_ub, bounds=[(0, None), (0, None)],
                           method="highs")
    if not res.success:
        raise ConfigurationError(f"constant fit failed: {res.message}")
    lower = max(0.0, float(np.max(-f / r)))
    return FunctionalInequalityReport(c1=float(res.x[0]), c2=float(res.x[1]), lower_c2=lower,
                                      samples=int(f.size))
