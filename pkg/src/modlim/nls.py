"""Semiclassical one-body mean-field dynamics.

    i hbar d_t psi = -(hbar^2 / 2) Lap psi + b0 |psi|^2 psi + kappa (V_c * |psi|^2) psi

This is the local (delta-interaction) limit of the Hartree equation with
``V_N``.  The mollified variant replaces ``b0 |psi|^2`` by ``V_N * |psi|^2``
using the exact Fourier transform of ``V_N``.

Time stepping is Strang splitting.  The kinetic flow is exact in Fourier
space and the potential flow is an exact pointwise phase rotation, because
``|psi|`` does not change during it.  A fourth-order symmetric composition
of Strang steps is available for rate studies that need very small time
errors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.fft as sfft

from .fields import (
    ComplexField, ConfigurationError, GridSpec, PhysicalParams, ScalarField,
    VectorField, coulomb_multiplier, coulomb_softening, vn_multiplier,
)

__all__ = [
    "WaveFunction",
    "QuantumObservables",
    "NLSTrajectory",
    "wkb_initialize",
    "smooth_datum",
    "observables",
    "nls_energy",
    "solve_nls",
    "continuity_residual",
    "modulated_kinetic_energy",
    "free_gaussian",
    "export_observables_csv",
    "export_observables_json",
]

# Yoshida triple-jump weights for a fourth-order symmetric composition
_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Normalised one-body wave function with its semiclassical parameter."""

    psi: ComplexField
    hbar: float

    def __post_init__(self):
        if not self.hbar > 0:
            raise ConfigurationError("hbar must be positive")
        nrm = self.psi.norm(2)
        if abs(nrm - 1.0) > 1e-10:
            raise ConfigurationError(f"wave function norm {nrm!r} differs from 1")

    @property
    def grid(self) -> GridSpec:
        return self.psi.grid


@dataclass(frozen=True, eq=False)
class QuantumObservables:
    rho_q: ScalarField
    j_q: VectorField


@dataclass
class NLSTrajectory:
    states: List[WaveFunction]
    times: np.ndarray
    dt: float
    mass: np.ndarray
    interaction: str
    coulomb_analogue: bool

    @property
    def final(self) -> WaveFunction:
        return self.states[-1]


def wkb_initialize(rho_in: ScalarField, s_phase: ScalarField, hbar: float) -> WaveFunction:
    """``psi = sqrt(rho_in) exp(i S_in / hbar)``.

    Raises
    ------
    ConfigurationError
        If ``rho_in`` is negative beyond -1e-12 or not normalised.
    """
    rho = rho_in.samples
    if rho.min() < -1e-12:
        raise ConfigurationError(f"negative input density {rho.min():.3g}")
    amp = np.sqrt(np.clip(rho, 0.0, None))
    psi = amp * np.exp(1j * s_phase.samples / hbar)
    return WaveFunction(ComplexField(rho_in.grid, psi), hbar)


def smooth_datum(grid: GridSpec, amplitude: float = 0.3, phase: float = 0.2):
    """Smooth periodic WKB data ``(rho_in, S_in)`` with unit mass.

    With ``y = 2 pi x / L``::

        rho_in = (1 + amplitude * prod_i cos y_i) / L^d
        S_in   = phase * (sin y_1 + cos y_2 + 0.5 sin(y_1 + y_2) + 0.5 cos y_3)

    keeping only the terms that exist in ``grid.dim`` dimensions.
    """
    ys = [2 * np.pi * c / grid.box_length for c in grid.coords()]
    rho = (1.0 + amplitude * np.prod([np.cos(y) for y in ys], axis=0)) / grid.volume
    s = np.sin(ys[0])
    if grid.dim >= 2:
        s = s + np.cos(ys[1]) + 0.5 * np.sin(ys[0] + ys[1])
    if grid.dim == 3:
        s = s + 0.5 * np.cos(ys[2])
    return ScalarField(grid, rho), ScalarField(grid, phase * s)


def _odd_wavenumbers(grid: GridSpec):
    """Wavenumbers with the Nyquist entry zeroed, for first derivatives."""
    ks = []
    for k in grid.wavenumbers():
        k = k.copy()
        k[np.isclose(np.abs(k), grid.k_max)] = 0.0
        ks.append(k)
    return ks


def _grad_complex(psi: np.ndarray, grid: GridSpec):
    ph = sfft.fftn(psi)
    return [sfft.ifftn(1j * k * ph) for k in _odd_wavenumbers(grid)]


def observables(wf: WaveFunction) -> QuantumObservables:
    """Mass density ``|psi|^2`` and momentum density ``hbar Im(conj(psi) grad psi)``."""
    psi = wf.psi.samples
    grid = wf.grid
    rho = (psi.real ** 2 + psi.imag ** 2)
    gp = _grad_complex(psi, grid)
    j = np.stack([wf.hbar * np.imag(np.conj(psi) * g) for g in gp])
    return QuantumObservables(ScalarField(grid, rho), VectorField(grid, j))


def modulated_kinetic_energy(wf: WaveFunction, u: VectorField) -> float:
    """``int |(-i hbar grad - u) psi|^2``."""
    psi = wf.psi.samples
    gp = _grad_complex(psi, wf.grid)
    total = 0.0
    for i, g in enumerate(gp):
        total += np.sum(np.abs(-1j * wf.hbar * g - u.samples[i] * psi) ** 2)
    return float(wf.grid.cell_volume * total)


def _interaction_multiplier(params: PhysicalParams, grid: GridSpec, interaction: str):
    """Fourier multiplier of the total two-body kernel acting on ``|psi|^2``."""
    if interaction == "local":
        mult = np.full(grid.shape, params.b0)
    elif interaction == "mollified":
        mult = vn_multiplier(params, grid)
    else:
        raise ConfigurationError(f"unknown interaction {interaction!r}")
    if params.kappa != 0.0:
        mult = mult + params.kappa * coulomb_multiplier(grid, coulomb_softening(params, grid))
    return mult


def _potential(rho: np.ndarray, mult: np.ndarray, local_b0: Optional[float]) -> np.ndarray:
    if local_b0 is not None:
        return local_b0 * rho
    return sfft.ifftn(mult * sfft.fftn(rho)).real


def nls_energy(wf: WaveFunction, params: PhysicalParams, interaction: str = "local") -> float:
    """``int (hbar^2/2)|grad psi|^2 + (1/2) rho (K * rho)`` with ``K = b0 delta + kappa V_c``."""
    grid = wf.grid
    psi = wf.psi.samples
    ph = sfft.fftn(psi) / grid.size
    kin = 0.5 * wf.hbar ** 2 * grid.volume * np.sum(grid.k_squared * np.abs(ph) ** 2)
    rho = np.abs(psi) ** 2
    mult = _interaction_multiplier(params, grid, interaction)
    pot = 0.5 * grid.cell_volume * np.sum(rho * _potential(rho, mult, None))
    return float(kin + pot)


def solve_nls(psi0: WaveFunction, params: PhysicalParams, t_end: float, dt: float,
              save_every: int = 1, interaction: str = "local", order: int = 2,
              save_times: Optional[np.ndarray] = None) -> NLSTrajectory:
    """Split-step evolution of the NLS equation.

    Parameters
    ----------
    psi0 : WaveFunction
    params : PhysicalParams
        Supplies ``b0``, ``kappa`` and, for the mollified variant, ``V_N``.
    t_end, dt : float
    save_every : int
        Snapshot stride in steps.
    interaction : {"local", "mollified"}
    order : {2, 4}
        Strang splitting or its fourth-order triple-jump composition.
    save_times : array, optional
        Explicit snapshot times (each must be a multiple of ``dt``).
    """
    if order not in (2, 4):
        raise ConfigurationError("order must be 2 or 4")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    grid = psi0.grid
    if grid.dim != params.dim:
        raise ConfigurationError("params.dim and grid.dim differ")
    hbar = psi0.hbar
    mult = _interaction_multiplier(params, grid, interaction)
    local_b0 = params.b0 if (interaction == "local" and params.kappa == 0.0) else None
    k2 = grid.k_squared
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigurationError("t_end must be a multiple of dt")
    save_steps = None
    if save_times is not None:
        save_steps = set(int(round(t / dt)) for t in np.atleast_1d(save_times))

    kin_cache = {}

    def kinetic(ph, tau):
        key = round(tau / dt, 15)
        if key not in kin_cache:
            kin_cache[key] = np.exp(-0.5j * hbar * k2 * tau)
        return ph * kin_cache[key]

    def strang(psi, tau):
        ph = kinetic(sfft.fftn(psi), 0.5 * tau)
        psi = sfft.ifftn(ph)
        rho = psi.real ** 2 + psi.imag ** 2
        psi = psi * np.exp(-1j * tau / hbar * _potential(rho, mult, local_b0))
        return sfft.ifftn(kinetic(sfft.fftn(psi), 0.5 * tau))

    psi = np.array(psi0.psi.samples)
    states = [psi0]
    times = [0.0]
    masses = [psi0.psi.norm(2) ** 2]
    for step in range(1, n_steps + 1):
        if order == 2:
            psi = strang(psi, dt)
        else:
            for w in _YOSHIDA:
                psi = strang(psi, w * dt)
        if not np.all(np.isfinite(psi)):
            raise ConfigurationError(f"non-finite wave function at t = {step * dt:.6g}")
        keep = (step in save_steps) if save_steps is not None else (step % save_every == 0 or step == n_steps)
        if keep:
            field = ComplexField(grid, psi)
            mass = field.norm(2) ** 2
            states.append(WaveFunction(field, hbar))
            times.append(step * dt)
            masses.append(mass)
    return NLSTrajectory(states=states, times=np.array(times), dt=dt, mass=np.array(masses),
                         interaction=interaction, coulomb_analogue=grid.dim != 3 and params.kappa != 0)


def continuity_residual(traj: NLSTrajectory) -> float:
    """Sup over interior snapshots of ``||d_t rho + div j||_2`` with centred time differences."""
    if len(traj.states) < 3:
        raise ConfigurationError("need at least three snapshots")
    taus = np.diff(traj.times)
    if np.ptp(taus) > 1e-9 * taus.mean():
        raise ConfigurationError("snapshots must be equally spaced")
    tau = taus.mean()
    grid = traj.states[0].grid
    obs = [observables(s) for s in traj.states]
    out = 0.0
    for n in range(1, len(obs) - 1):
        drho = (obs[n + 1].rho_q.samples - obs[n - 1].rho_q.samples) / (2 * tau)
        jh = [sfft.fftn(obs[n].j_q.samples[i]) for i in range(grid.dim)]
        divj = sfft.ifftn(sum(1j * k * a for k, a in zip(grid.wavenumbers(), jh))).real
        r = drho + divj
        out = max(out, float(np.sqrt(grid.cell_volume * np.sum(r * r))))
    return out


def free_gaussian(grid: GridSpec, hbar: float, sigma: float, t: float,
                  center=None, velocity=None) -> np.ndarray:
    """Closed-form free evolution of a normalised Gaussian packet on ``R^dim``.

    ``psi(0) = (pi sigma^2)^(-d/4) exp(-|x-c|^2/(2 sigma^2) + i v.(x-c)/hbar)``
    under ``i hbar psi_t = -(hbar^2/2) Lap psi``; the packet width is
    ``sigma sqrt(1 + (hbar t / sigma^2)^2)``.
    """
    d = grid.dim
    c = np.full(d, 0.5 * grid.box_length) if center is None else np.asarray(center, float)
    v = np.zeros(d) if velocity is None else np.asarray(velocity, float)
    x = grid.coords()
    a = sigma ** 2 + 1j * hbar * t
    norm = (np.pi * sigma ** 2) ** (-d / 4.0) * (sigma ** 2 / a) ** (d / 2.0)
    expo = np.zeros(grid.shape, dtype=complex)
    for i in range(d):
        y = x[i] - c[i] - v[i] * t
        expo += -y ** 2 / (2 * a) + 1j * v[i] * (x[i] - c[i]) / hbar - 0.5j * v[i] ** 2 * t / hbar
    return norm * np.exp(expo)


def export_observables_csv(traj: NLSTrajectory, path) -> None:
    """Long-format rows ``time, node, rho, j_0..j_{d-1}``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = traj.states[0].grid.dim
        writer.writerow(["time", "node", "rho"] + [f"j{i}" for i in range(d)])
        for t, s in zip(traj.times, traj.states):
            obs = observables(s)
            rho = obs.rho_q.samples.ravel()
            js = [obs.j_q.samples[i].ravel() for i in range(d)]
            for n in range(rho.size):
                writer.writerow([f"{t:.17g}", n, f"{rho[n]:.17g}"] + [f"{j[n]:.17g}" for j in js])


def export_observables_json(traj: NLSTrajectory, path) -> None:
    data = []
    for t, s in zip(traj.times, traj.states):
        obs = observables(s)
        data.append({"time": float(t), "rho": obs.rho_q.samples.tolist(),
                     "j": obs.j_q.samples.tolist()})
    with open(path, "w") as fh:
        json.dump({"snapshots": data, "interaction": traj.interaction}, fh)
