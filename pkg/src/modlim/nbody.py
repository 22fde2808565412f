"""Exact propagation of the bosonic few-body problem on a product grid.

The wave function of ``N`` particles in ``dim`` dimensions is a complex array
over ``N * dim`` periodic axes; particle ``p`` owns axes
``p*dim .. p*dim + dim - 1``.  The Hamiltonian is

    H = sum_i -(hbar^2 / 2) Lap_i + (1/N) sum_{i<j} (V_N + kappa V_c)(x_i - x_j)

with ``V_N`` sampled at minimum-image displacements and ``V_c`` the periodic
mean-zero Coulomb kernel (softened in toy dimensions).  Only ``N = 2`` and
``N = 3`` are supported; the product grid is capped at ``2**26`` points.

Normalisation follows the continuum: ``h**(N dim) * sum |psi|^2 = 1``.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .fields import (
    ConfigurationError, GridSpec, PhysicalParams, ScalarField, VectorField, VProfile,
    coulomb_kernel_samples, sample_vn,
)
from .scattering import ScatteringProfile, coupling

__all__ = [
    "MEMORY_LIMIT",
    "NBodyWaveFunction",
    "NBodyTrajectory",
    "Marginals",
    "ConservationReport",
    "TwoBodyEnergyReport",
    "product_state",
    "symmetrize",
    "pair_potential",
    "apply_hamiltonian",
    "nbody_energy",
    "propagate",
    "marginals",
    "conservation_identities",
    "two_body_energy_diagnostic",
    "save_checkpoint",
    "load_checkpoint",
]

#: Largest admissible number of product-grid points.
MEMORY_LIMIT = 2 ** 26

_MAGIC = b"MODLIMCK"


def _check_memory(grid: GridSpec, n_particles: int) -> None:
    total = grid.size ** n_particles
    if total > MEMORY_LIMIT:
        raise ConfigurationError(
            f"memory guard: {n_particles} particles on {grid.shape} need {total} points "
            f"(limit {MEMORY_LIMIT})"
        )


def _particle_perms(n_particles: int, dim: int):
    """Axis permutations realising every particle transposition ``(p, p+1)``."""
    out = []
    for p in range(n_particles - 1):
        order = list(range(n_particles))
        order[p], order[p + 1] = order[p + 1], order[p]
        out.append([q * dim + a for q in order for a in range(dim)])
    return out


@dataclass(frozen=True, eq=False)
class NBodyWaveFunction:
    """Normalised, swap-symmetric wave function of ``params.n_particles`` bosons.

    Attributes
    ----------
    psi : ndarray
        Complex samples of shape ``(n,) * (N * dim)``.
    params : PhysicalParams
    grid : GridSpec
        The one-particle grid.
    """

    psi: np.ndarray
    params: PhysicalParams
    grid: GridSpec

    def __post_init__(self):
        n_p = self.n_particles
        if n_p not in (2, 3):
            raise ConfigurationError("the few-body toy supports N = 2 or 3 only")
        if self.grid.dim != self.params.dim:
            raise ConfigurationError("grid and params dimensions differ")
        _check_memory(self.grid, n_p)
        shape = self.grid.shape * n_p
        psi = np.asarray(self.psi, dtype=complex)
        if psi.shape != shape:
            raise ConfigurationError(f"psi has shape {psi.shape}, expected {shape}")
        psi = psi.copy()
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        nrm = self.norm()
        if abs(nrm - 1.0) > 1e-10:
            raise ConfigurationError(f"N-body wave function norm {nrm!r} differs from 1")
        scale = np.abs(psi).max()
        for perm in _particle_perms(n_p, self.grid.dim):
            if np.abs(psi - psi.transpose(perm)).max() > 1e-10 * scale:
                raise ConfigurationError("wave function is not symmetric under particle exchange")

    @property
    def n_particles(self) -> int:
        return int(self.params.n_particles)

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume ** self.n_particles

    def norm(self) -> float:
        return float(np.sqrt(self.cell_volume * np.sum(np.abs(self.psi) ** 2)))


def symmetrize(psi: np.ndarray, n_particles: int, dim: int) -> np.ndarray:
    """Average of ``psi`` over all particle permutations."""
    out = np.zeros_like(psi, dtype=complex)
    perms = list(itertools.permutations(range(n_particles)))
    for order in perms:
        out += psi.transpose([q * dim + a for q in order for a in range(dim)])
    return out / len(perms)


def product_state(orbitals: Sequence[np.ndarray], params: PhysicalParams,
                  grid: GridSpec, correlation: Optional[np.ndarray] = None) -> NBodyWaveFunction:
    """Symmetrised, normalised product of one-particle orbitals.

    Parameters
    ----------
    orbitals : sequence of ndarray
        One array per particle, each of shape ``grid.shape``.  A single
        orbital is reused for every particle.
    correlation : ndarray, optional
        Pair factor ``c(x_i - x_j)`` sampled on the one-particle grid at
        minimum-image displacements; the state is multiplied by
        ``prod_{i<j} c(x_i - x_j)`` before normalisation.
    """
    n_p = int(params.n_particles)
    _check_memory(grid, n_p)
    orbitals = list(orbitals)
    if len(orbitals) == 1:
        orbitals = orbitals * n_p
    if len(orbitals) != n_p:
        raise ConfigurationError("need one orbital per particle")
    d = grid.dim
    psi = np.ones((1,) * (n_p * d), dtype=complex)
    for p, phi in enumerate(orbitals):
        phi = np.asarray(phi, dtype=complex)
        if phi.shape != grid.shape:
            raise ConfigurationError("orbital shape does not match the grid")
        shape = [1] * (n_p * d)
        shape[p * d:(p + 1) * d] = grid.shape
        psi = psi * phi.reshape(shape)
    psi = np.broadcast_to(psi, grid.shape * n_p)
    if correlation is not None:
        for p, q in itertools.combinations(range(n_p), 2):
            psi = psi * _pair_lookup(np.asarray(correlation), grid, n_p, p, q)
    psi = symmetrize(np.asarray(psi), n_p, d)
    psi /= np.sqrt(grid.cell_volume ** n_p * np.sum(np.abs(psi) ** 2))
    return NBodyWaveFunction(psi, params, grid)


# ---------------------------------------------------------------------------
# operators

def _axis_index(n: int, n_axes: int, axis: int) -> np.ndarray:
    shape = [1] * n_axes
    shape[axis] = n
    return np.arange(n).reshape(shape)


def _pair_lookup(kernel: np.ndarray, grid: GridSpec, n_p: int, p: int, q: int) -> np.ndarray:
    """``kernel(x_p - x_q)`` broadcast over the product grid (minimum image)."""
    n, d = grid.points_per_axis, grid.dim
    idx = tuple(
        (_axis_index(n, n_p * d, p * d + a) - _axis_index(n, n_p * d, q * d + a)) % n
        for a in range(d)
    )
    return kernel[idx]


def _pair_kernel(params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """Samples of ``V_N + kappa V_c`` on the one-particle grid."""
    kern = np.zeros(grid.shape)
    if not params.v_profile.is_zero:
        kern = kern + sample_vn(params, grid).samples
    if params.kappa != 0.0:
        kern = kern + params.kappa * coulomb_kernel_samples(params, grid)
    return kern


def pair_potential(params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """``(1/N) sum_{i<j} (V_N + kappa V_c)(x_i - x_j)`` on the product grid."""
    n_p = int(params.n_particles)
    kern = _pair_kernel(params, grid)
    total = np.zeros(grid.shape * n_p)
    for p, q in itertools.combinations(range(n_p), 2):
        total = total + _pair_lookup(kern, grid, n_p, p, q)
    return total / n_p


def _axis_wavenumbers(grid: GridSpec, n_axes: int, zero_nyquist: bool = False):
    k = grid.wavenumber_axis().copy()
    if zero_nyquist:
        k[np.isclose(np.abs(k), grid.k_max)] = 0.0
    return [k.reshape([-1 if a == ax else 1 for a in range(n_axes)]) for ax in range(n_axes)]


def _k_squared(grid: GridSpec, n_axes: int, axes: Optional[Sequence[int]] = None) -> np.ndarray:
    ks = _axis_wavenumbers(grid, n_axes)
    axes = range(n_axes) if axes is None else axes
    out = np.zeros((1,) * n_axes)
    for a in axes:
        out = out + ks[a] ** 2
    return out


def _grad_particle(psi: np.ndarray, grid: GridSpec, n_axes: int, particle: int):
    """Spectral gradient with respect to the coordinates of one particle."""
    ks = _axis_wavenumbers(grid, n_axes, zero_nyquist=True)
    d = grid.dim
    ph = sfft.fftn(psi)
    return [sfft.ifftn(1j * ks[particle * d + a] * ph) for a in range(d)]


def apply_hamiltonian(wf: NBodyWaveFunction, potential: Optional[np.ndarray] = None) -> np.ndarray:
    """``H psi`` with the kinetic part applied in Fourier space."""
    grid = wf.grid
    if potential is None:
        potential = pair_potential(wf.params, grid)
    return _apply_h_raw(wf.psi, wf.params, grid, wf.n_particles * grid.dim, potential)


def nbody_energy(wf: NBodyWaveFunction, potential: Optional[np.ndarray] = None) -> float:
    """``<psi, (H + N) psi> / N``."""
    hpsi = apply_hamiltonian(wf, potential)
    e = wf.cell_volume * np.vdot(wf.psi, hpsi).real
    return float((e + wf.n_particles) / wf.n_particles)


# ---------------------------------------------------------------------------
# propagation

@dataclass
class NBodyTrajectory:
    """Saved states of a few-body run.

    Attributes
    ----------
    states : list of NBodyWaveFunction
    times, mass, energy : ndarray
        ``energy`` is ``<psi, (H + N) psi> / N`` per snapshot.
    total_momentum : ndarray
        ``int J^(1)`` per snapshot, shape ``(n_snapshots, dim)``.
    analogue : bool
        True when the run is in a toy dimension.
    """

    states: List[NBodyWaveFunction]
    times: np.ndarray
    dt: float
    mass: np.ndarray
    energy: np.ndarray
    total_momentum: np.ndarray
    analogue: bool

    @property
    def final(self) -> NBodyWaveFunction:
        return self.states[-1]


def propagate(psi0: NBodyWaveFunction, t_end: float, dt: float,
              save_every: int = 1) -> NBodyTrajectory:
    """Strang splitting: half kinetic, exact potential phase, half kinetic.

    Raises
    ------
    ConfigurationError
        On a non-positive step, a ``t_end`` that is not a multiple of ``dt``,
        an unresolved ``V_N`` or the memory guard.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigurationError("t_end must be a multiple of dt")
    params, grid = psi0.params, psi0.grid
    hbar = params.hbar
    n_axes = psi0.n_particles * grid.dim
    pot = pair_potential(params, grid)
    half_kin = np.exp(-0.25j * hbar * dt * _k_squared(grid, n_axes))
    phase = np.exp(-1j * dt / hbar * pot)

    states, times = [psi0], [0.0]
    psi = np.array(psi0.psi)
    for step in range(1, n_steps + 1):
        psi = sfft.ifftn(half_kin * sfft.fftn(psi))
        psi *= phase
        psi = sfft.ifftn(half_kin * sfft.fftn(psi))
        if step % save_every == 0 or step == n_steps:
            if not np.all(np.isfinite(psi)):
                raise ConfigurationError(f"non-finite wave function at t = {step * dt:.6g}")
            states.append(NBodyWaveFunction(psi, params, grid))
            times.append(step * dt)
    mass = np.array([s.norm() ** 2 for s in states])
    energy = np.array([nbody_energy(s, pot) for s in states])
    mom = np.array([marginals(s, with_gamma=False).j1.samples.reshape(grid.dim, -1).sum(axis=1)
                    * grid.cell_volume for s in states])
    return NBodyTrajectory(states=states, times=np.array(times), dt=dt, mass=mass,
                           energy=energy, total_momentum=mom, analogue=grid.dim != 3)


# ---------------------------------------------------------------------------
# marginals and identities

@dataclass(frozen=True, eq=False)
class Marginals:
    """Reduced densities of a few-body state.

    ``gamma1`` is the one-particle density matrix as an operator on the
    orthonormal grid basis, ``h**d * gamma(x_m, x_n)``, so that its trace is
    one and its eigenvalues are occupation numbers.  ``rho1`` and ``rho2``
    are densities with respect to Lebesgue measure.
    """

    gamma1: Optional[np.ndarray]
    rho1: ScalarField
    rho2: np.ndarray
    j1: VectorField


def marginals(wf: NBodyWaveFunction, with_gamma: bool = True) -> Marginals:
    """One- and two-particle reduced objects of ``wf``."""
    grid = wf.grid
    n_p, d = wf.n_particles, grid.dim
    hd = grid.cell_volume
    psi = wf.psi
    rho = psi.real ** 2 + psi.imag ** 2
    rho2 = rho.sum(axis=tuple(range(2 * d, n_p * d))) * hd ** (n_p - 2) if n_p > 2 else rho
    rho1 = rho2.sum(axis=tuple(range(d, 2 * d))) * hd
    grads = _grad_particle(psi, grid, n_p * d, 0)
    rest = tuple(range(d, n_p * d))
    j1 = np.stack([wf.params.hbar * np.imag(np.conj(psi) * g).sum(axis=rest) * hd ** (n_p - 1)
                   for g in grads])
    gamma = None
    if with_gamma:
        mat = psi.reshape(grid.size, -1)
        gamma = (mat @ mat.conj().T) * hd ** (n_p - 1) * hd
        gamma = 0.5 * (gamma + gamma.conj().T)
    return Marginals(gamma1=gamma, rho1=ScalarField(grid, rho1), rho2=rho2,
                     j1=VectorField(grid, j1))


@dataclass(frozen=True)
class ConservationReport:
    """Centred-difference residuals of the continuity and momentum laws.

    ``continuity`` and ``momentum`` are maxima over interior snapshots of the
    L2 norms of the residual fields; ``momentum_drift`` is the largest change
    of the total momentum ``int J^(1)`` along the run.
    """

    continuity: float
    momentum: float
    momentum_drift: float
    continuity_series: np.ndarray
    momentum_series: np.ndarray


def _spectral_grad_real(f: np.ndarray, grid: GridSpec) -> list:
    ks = _axis_wavenumbers(grid, grid.dim, zero_nyquist=True)
    fh = sfft.fftn(f)
    return [sfft.ifftn(1j * k * fh).real for k in ks]


def _force_density(wf: NBodyWaveFunction, rho2: np.ndarray, grad_kernel) -> np.ndarray:
    """``((N-1)/N) int grad(V_N + kappa V_c)(x1 - x2) rho2(x1, x2) dx2``."""
    grid = wf.grid
    d = grid.dim
    n_p = wf.n_particles
    out = []
    for a in range(d):
        gk = _pair_lookup(grad_kernel[a], grid, 2, 0, 1)
        out.append((gk * rho2).sum(axis=tuple(range(d, 2 * d))) * grid.cell_volume)
    return (n_p - 1) / n_p * np.stack(out)


def _kinetic_momentum_flux(wf: NBodyWaveFunction) -> np.ndarray:
    """``(hbar^2/2) int Re[(-Lap_1 conj psi) grad_1 psi + conj psi grad_1 Lap_1 psi] dX_2``."""
    grid = wf.grid
    n_p, d = wf.n_particles, grid.dim
    n_axes = n_p * d
    psi = wf.psi
    k2_1 = _k_squared(grid, n_axes, axes=range(d))
    lap = sfft.ifftn(-k2_1 * sfft.fftn(psi))
    g_psi = _grad_particle(psi, grid, n_axes, 0)
    g_lap = _grad_particle(lap, grid, n_axes, 0)
    rest = tuple(range(d, n_axes))
    scale = 0.5 * wf.params.hbar ** 2 * grid.cell_volume ** (n_p - 1)
    return np.stack([
        scale * np.real(-np.conj(lap) * g_psi[a] + np.conj(psi) * g_lap[a]).sum(axis=rest)
        for a in range(d)
    ])


def conservation_identities(traj: NBodyTrajectory) -> ConservationReport:
    """Residuals of the mass and momentum evolution laws of ``rho^(1)``, ``J^(1)``.

    The time derivative is the centred difference over the snapshot spacing,
    so the residuals are second order in that spacing for a trajectory saved
    every step.
    """
    states = traj.states
    if len(states) < 3:
        raise ConfigurationError("need at least three snapshots")
    taus = np.diff(traj.times)
    if np.ptp(taus) > 1e-9 * taus.mean():
        raise ConfigurationError("snapshots must be equally spaced")
    tau = taus.mean()
    grid = states[0].grid
    params = states[0].params
    kern = _pair_kernel(params, grid)
    grad_kernel = _spectral_grad_real(kern, grid)
    marg = [marginals(s, with_gamma=False) for s in states]
    cont, mom = [], []
    hd = grid.cell_volume
    for n in range(1, len(states) - 1):
        drho = (marg[n + 1].rho1.samples - marg[n - 1].rho1.samples) / (2 * tau)
        divj = sum(_spectral_grad_real(marg[n].j1.samples[a], grid)[a] for a in range(grid.dim))
        r = drho + divj
        cont.append(np.sqrt(hd * np.sum(r * r)))
        dj = (marg[n + 1].j1.samples - marg[n - 1].j1.samples) / (2 * tau)
        rhs = _kinetic_momentum_flux(states[n]) - _force_density(states[n], marg[n].rho2, grad_kernel)
        r = dj - rhs
        mom.append(np.sqrt(hd * np.sum(r * r)))
    drift = float(np.max(np.abs(traj.total_momentum - traj.total_momentum[0])))
    return ConservationReport(continuity=float(max(cont)), momentum=float(max(mom)),
                              momentum_drift=drift, continuity_series=np.array(cont),
                              momentum_series=np.array(mom))


# ---------------------------------------------------------------------------
# two-body energy inequality

@dataclass(frozen=True)
class TwoBodyEnergyReport:
    """``lhs = 16/(N(N-1)) <psi, (H+N)^2 psi>`` and the correlated ``rhs``.

    ``passed`` is None outside the regime ``N^(beta-1) hbar^-2 < 0.1``,
    where the inequality is reported but not asserted.
    """

    lhs: float
    rhs: float
    ratio: float
    coupling: float
    in_regime: bool
    passed: Optional[bool]
    analogue: bool


def two_body_energy_diagnostic(wf: NBodyWaveFunction, profile: ScatteringProfile,
                               regime: float = 0.1) -> TwoBodyEnergyReport:
    """Compare ``<(1 - hbar^2 Lap_1)(1 - hbar^2 Lap_2) phi, phi>`` with the ``(H+N)^2`` energy.

    ``phi = psi / (1 - w(x_1 - x_2))`` uses the scattering profile at
    minimum-image separations.
    """
    params, grid = wf.params, wf.grid
    pp = profile.params
    if (pp.n_particles, pp.hbar, pp.beta) != (params.n_particles, params.hbar, params.beta) \
            or pp.v_profile != params.v_profile:
        raise ConfigurationError("scattering profile was solved for different parameters")
    n_p, d = wf.n_particles, grid.dim
    n_axes = n_p * d
    w_grid = profile.w(grid.centered_radius())
    f_grid = 1.0 - w_grid
    if f_grid.min() <= 0:
        raise ConfigurationError("correlation factor 1 - w is not positive")
    pot = pair_potential(params, grid)
    # (H + N)^2 psi as two successive applications of H + N
    shifted = _apply_h_raw(wf.psi, params, grid, n_axes, pot) + n_p * wf.psi
    hh = _apply_h_raw(shifted, params, grid, n_axes, pot) + n_p * shifted
    lhs = 16.0 / (n_p * (n_p - 1)) * wf.cell_volume * np.vdot(wf.psi, hh).real
    phi = wf.psi / _pair_lookup(f_grid, grid, n_p, 0, 1)
    coeffs = sfft.fftn(phi) / phi.size
    h2 = params.hbar ** 2
    weight = (1.0 + h2 * _k_squared(grid, n_axes, range(d))) \
        * (1.0 + h2 * _k_squared(grid, n_axes, range(d, 2 * d)))
    rhs = grid.volume ** n_p * float(np.sum(weight * np.abs(coeffs) ** 2))
    eps = coupling(params)
    in_regime = eps < regime
    ratio = rhs / lhs
    return TwoBodyEnergyReport(lhs=float(lhs), rhs=rhs, ratio=float(ratio), coupling=eps,
                               in_regime=in_regime, passed=(ratio <= 1.0) if in_regime else None,
                               analogue=profile.analogue or d != 3)


def _apply_h_raw(psi: np.ndarray, params: PhysicalParams, grid: GridSpec, n_axes: int,
                 pot: np.ndarray) -> np.ndarray:
    kin = sfft.ifftn(0.5 * params.hbar ** 2 * _k_squared(grid, n_axes) * sfft.fftn(psi))
    return kin + pot * psi


# ---------------------------------------------------------------------------
# checkpoints

def _params_dict(params: PhysicalParams) -> dict:
    return {
        "n_particles": int(params.n_particles), "hbar": params.hbar, "beta": params.beta,
        "kappa": params.kappa, "eta": params.eta, "dim": params.dim,
        "softening": params.softening,
        "v_profile": {"radius": params.v_profile.radius, "amplitude": params.v_profile.amplitude},
    }


def save_checkpoint(wf: NBodyWaveFunction, path, time: float = 0.0) -> None:
    """Write ``wf`` as magic bytes, a length-prefixed JSON header and raw samples."""
    header = {
        "format": "modlim-nbody-checkpoint", "version": 1, "time": float(time),
        "grid": {"dim": wf.grid.dim, "points_per_axis": wf.grid.points_per_axis,
                 "box_length": wf.grid.box_length},
        "params": _params_dict(wf.params),
        "dtype": "complex128", "shape": list(wf.psi.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(wf.psi, dtype="<c16").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(wave_function, time)``."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigurationError("not a modlim checkpoint")
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length))
        data = np.frombuffer(fh.read(), dtype="<c16")
    g = header["grid"]
    grid = GridSpec(g["dim"], g["points_per_axis"], g["box_length"])
    p = dict(header["params"])
    prof = p.pop("v_profile")
    params = PhysicalParams(v_profile=VProfile(prof["radius"], prof["amplitude"]), **p)
    if data.size != math.prod(header["shape"]):
        raise ConfigurationError("checkpoint payload is truncated")
    psi = data.reshape(header["shape"])
    return NBodyWaveFunction(psi, params, grid), header["time"]
