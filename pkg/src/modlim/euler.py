"""Compressible Euler-Poisson system with pressure ``P = b0 rho^2 / 2``.

Velocity form evolved here::

    d_t rho + div(rho u) = 0
    d_t u + (u . grad) u + b0 grad rho + kappa grad(V_c * rho) = 0

The solver is pseudo-spectral (real FFTs) with 2/3-rule truncation of every
nonlinear product and classical RK4 in time.  The state is advanced in
Fourier space so mass (the zero mode of rho) is conserved to roundoff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .fields import (
    ConfigurationError, GridSpec, PhysicalParams, ScalarField, VectorField,
    coulomb_multiplier, coulomb_softening,
)

__all__ = [
    "FluidState",
    "FluidTrajectory",
    "SolverHalt",
    "solve_euler_poisson",
    "momentum_form_residual",
    "acoustic_frequency",
    "measure_frequency",
    "homogeneous_state",
    "acoustic_state",
    "export_trajectory_json",
]


class SolverHalt(RuntimeError):
    """Raised for CFL violations, non-finite values or negative density."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


@dataclass(frozen=True, eq=False)
class FluidState:
    rho: ScalarField
    u: VectorField
    time: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid

    def mass(self) -> float:
        return self.rho.integral()

    def momentum(self) -> VectorField:
        return VectorField(self.grid, self.rho.samples[None] * self.u.samples)


@dataclass
class FluidTrajectory:
    """Saved states plus per-step diagnostics.

    Attributes
    ----------
    states : list of FluidState
        Snapshots every ``save_every`` steps (always including the first and last).
    dt : float
    times, mass, max_grad_u, min_rho, max_curl : ndarray
        Per-step diagnostics.
    probe : ndarray or None
        Per-step value of a tracked Fourier coefficient of rho.
    halted : str or None
        Reason when the blow-up guard stopped the run early.
    """

    states: List[FluidState]
    dt: float
    save_every: int
    times: np.ndarray
    mass: np.ndarray
    max_grad_u: np.ndarray
    min_rho: np.ndarray
    max_curl: np.ndarray
    probe: Optional[np.ndarray] = None
    halted: Optional[str] = None
    guard_time: Optional[float] = None
    coulomb_analogue: bool = False

    @property
    def grid(self) -> GridSpec:
        return self.states[0].grid

    @property
    def final(self) -> FluidState:
        return self.states[-1]

    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])) / abs(self.mass[0]))


class _Spectral:
    """Real-FFT helpers for one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        n, d = grid.points_per_axis, grid.dim
        full = grid.wavenumber_axis()
        half = 2.0 * np.pi * np.fft.rfftfreq(n, d=grid.h)
        axes = [full] * (d - 1) + [half]
        self.k = [np.asarray(a) for a in np.meshgrid(*axes, indexing="ij")]
        self.k2 = sum(k * k for k in self.k)
        cut = (2.0 / 3.0) * grid.k_max
        mask = np.ones(self.k2.shape, dtype=bool)
        for k in self.k:
            mask &= np.abs(k) < cut
        self.mask = mask
        self.axes = tuple(range(d))
        self.shape = grid.shape

    def fwd(self, a):
        return sfft.rfftn(a, axes=self.axes)

    def inv(self, a):
        return sfft.irfftn(a, s=self.shape, axes=self.axes)

    def grad(self, ah):
        return [self.inv(1j * k * ah) for k in self.k]

    def curl(self, uh):
        """Vorticity: a scalar in 2D, a 3-vector in 3D, empty in 1D."""
        k = self.k
        if len(uh) == 1:
            return []
        if len(uh) == 2:
            return [self.inv(1j * (k[0] * uh[1] - k[1] * uh[0]))]
        return [self.inv(1j * (k[1] * uh[2] - k[2] * uh[1])),
                self.inv(1j * (k[2] * uh[0] - k[0] * uh[2])),
                self.inv(1j * (k[0] * uh[1] - k[1] * uh[0]))]


def _omega_cross_u(omega, u):
    if not omega:
        return [np.zeros_like(u[0])]
    if len(u) == 2:
        w = omega[0]
        return [-w * u[1], w * u[0]]
    return [omega[1] * u[2] - omega[2] * u[1],
            omega[2] * u[0] - omega[0] * u[2],
            omega[0] * u[1] - omega[1] * u[0]]


def _coulomb_half(grid: GridSpec, softening: Optional[float]) -> np.ndarray:
    """Coulomb multiplier restricted to the rfft half spectrum."""
    mult = coulomb_multiplier(grid, softening)
    n = grid.points_per_axis
    return np.ascontiguousarray(mult[..., : n // 2 + 1])


def _softening(params: PhysicalParams, grid: GridSpec) -> Optional[float]:
    return coulomb_softening(params, grid)


def homogeneous_state(grid: GridSpec) -> FluidState:
    rho = np.full(grid.shape, 1.0 / grid.volume)
    return FluidState(ScalarField(grid, rho), VectorField(grid, np.zeros((grid.dim,) + grid.shape)))


def acoustic_state(grid: GridSpec, mode: Sequence[int], amplitude: float) -> FluidState:
    """``rho = rho_bar (1 + amplitude cos(k.x))``, ``u = 0``, with ``int rho = 1``."""
    x = grid.coords()
    kvec = 2.0 * np.pi * np.asarray(mode, dtype=float) / grid.box_length
    phase = sum(k * xi for k, xi in zip(kvec, x))
    rho_bar = 1.0 / grid.volume
    rho = rho_bar * (1.0 + amplitude * np.cos(phase))
    return FluidState(ScalarField(grid, rho), VectorField(grid, np.zeros((grid.dim,) + grid.shape)))


def acoustic_frequency(params: PhysicalParams, grid: GridSpec, mode: Sequence[int]) -> float:
    """Linearised frequency ``omega^2 = rho_bar |k|^2 (b0 + kappa K_hat(k))``.

    In three dimensions ``K_hat(k) = 4 pi / |k|^2`` so the Coulomb part is the
    constant ``4 pi kappa rho_bar``; in toy dimensions the transform of the
    softened kernel on the grid is used.
    """
    kvec = 2.0 * np.pi * np.asarray(mode, dtype=float) / grid.box_length
    k2 = float(np.sum(kvec ** 2))
    rho_bar = 1.0 / grid.volume
    mult = coulomb_multiplier(grid, _softening(params, grid))
    idx = tuple(int(m) % grid.points_per_axis for m in mode)
    return float(np.sqrt(rho_bar * k2 * (params.b0 + params.kappa * mult[idx])))


def solve_euler_poisson(init: FluidState, params: PhysicalParams, t_end: float, dt: float,
                        save_every: int = 1, blowup_factor: float = 1e3,
                        blowup_floor: float = 1.0, cfl: float = 0.5,
                        forcing: Optional[Callable] = None,
                        probe_mode: Optional[Sequence[int]] = None,
                        check_mass: bool = True, guard_every: int = 1) -> FluidTrajectory:
    """Advance the Euler-Poisson system from ``init`` to ``t_end``.

    Parameters
    ----------
    init : FluidState
        Initial density and velocity; ``int rho`` must equal 1.
    params : PhysicalParams
        Supplies ``b0`` and ``kappa`` (and the softening in toy dimensions).
    t_end, dt : float
        Final time and step; the last step is shortened to land on ``t_end``.
    save_every : int
        Snapshot stride.
    blowup_factor, blowup_floor : float
        The run stops when ``max |grad u|`` exceeds
        ``blowup_factor * max(initial max |grad u|, blowup_floor)``.
    forcing : callable, optional
        ``forcing(t) -> (f_rho, f_u)`` source terms added to the two equations,
        used for manufactured-solution tests.
    probe_mode : sequence of int, optional
        Integer mode whose rho coefficient is recorded every step.
    guard_every : int
        Stride at which the full velocity gradient is recomputed for the
        blow-up guard (the last value is carried in between).

    Raises
    ------
    SolverHalt
        On CFL violation, non-finite values, negative density or mass drift.
    """
    grid = init.grid
    if params.dim != grid.dim:
        raise ConfigurationError("params.dim and grid.dim differ")
    if dt <= 0 or t_end < 0:
        raise ConfigurationError("dt must be positive and t_end nonnegative")
    mass0 = init.mass()
    if check_mass and abs(mass0 - 1.0) > 1e-8:
        raise ConfigurationError(f"initial mass {mass0} differs from 1")
    sp = _Spectral(grid)
    b0, kappa = params.b0, params.kappa
    pot = b0 + kappa * _coulomb_half(grid, _softening(params, grid))
    d = grid.dim
    mask = sp.mask

    def rhs(t, rh, uh, keep=False):
        # (u.grad)u = grad(|u|^2 / 2) + omega x u, each product truncated
        rho = sp.inv(rh)
        u = [sp.inv(a) for a in uh]
        omega = sp.curl(uh)
        flux = [sp.fwd(rho * ui) * mask for ui in u]
        drh = -sum(1j * k * f for k, f in zip(sp.k, flux))
        kin = sp.fwd(0.5 * sum(ui * ui for ui in u)) * mask
        wxu = _omega_cross_u(omega, u)
        duh = []
        for i in range(d):
            rot = sp.fwd(wxu[i]) * mask if omega else 0.0
            duh.append(-rot - 1j * sp.k[i] * (kin + pot * rh))
        if forcing is not None:
            fr, fu = forcing(t)
            drh = drh + sp.fwd(fr)
            duh = [a + sp.fwd(np.asarray(fu[i])) for i, a in enumerate(duh)]
        if keep:
            return drh, duh, (rho, u, omega)
        return drh, duh

    def diagnostics(uh, extras, full=True, last=0.0):
        rho, u, omega = extras
        if full:
            grads = [sp.grad(a) for a in uh]
            g = float(np.sqrt(sum(grads[i][j] ** 2 for i in range(d) for j in range(d))).max())
        else:
            g = last
        speed = np.sqrt(sum(ui * ui for ui in u)) + np.sqrt(np.maximum(b0 * rho, 0.0))
        if not omega:
            curl = 0.0
        else:
            curl = float(np.max(np.sqrt(sum(w * w for w in omega))))
        return g, float(rho.min()), curl, float(speed.max())

    def make_state(rho, u, t):
        return FluidState(ScalarField(grid, rho), VectorField(grid, np.stack(u)), t)

    rh = sp.fwd(init.rho.samples)
    uh = [sp.fwd(init.u.samples[i]) for i in range(d)]
    if probe_mode is not None:
        if probe_mode[-1] < 0:
            raise ConfigurationError("probe_mode last component must be nonnegative")
        pidx = tuple(int(m) % grid.points_per_axis for m in probe_mode[:-1]) + (int(probe_mode[-1]),)
    k1 = rhs(0.0, rh, uh, keep=True)
    g0, m0, c0, s0 = diagnostics(uh, k1[2])
    threshold = blowup_factor * max(g0, blowup_floor)
    times, masses, grads_l, mins, curls, probes = [0.0], [mass0], [g0], [m0], [c0], []
    if probe_mode is not None:
        probes.append(rh[pidx] / grid.size)
    states = [make_state(k1[2][0], k1[2][1], init.time)]
    t = 0.0
    halted = None
    guard_time = None
    n_steps = int(np.ceil(t_end / dt - 1e-9))
    for step in range(1, n_steps + 1):
        h = min(dt, t_end - t)
        if s0 * h > cfl * grid.h * (1 + 1e-12):
            raise SolverHalt(f"CFL violated: dt*max(|u|+sqrt(b0 rho)) = {s0 * h:.3g} > {cfl} h", t)
        k2 = rhs(t + h / 2, rh + h / 2 * k1[0], [a + h / 2 * b for a, b in zip(uh, k1[1])])
        k3 = rhs(t + h / 2, rh + h / 2 * k2[0], [a + h / 2 * b for a, b in zip(uh, k2[1])])
        k4 = rhs(t + h, rh + h * k3[0], [a + h * b for a, b in zip(uh, k3[1])])
        rh = rh + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        uh = [a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
              for a, b1, b2, b3, b4 in zip(uh, k1[1], k2[1], k3[1], k4[1])]
        t = t + h if step < n_steps else t_end
        k1 = rhs(t, rh, uh, keep=True)
        rho, u, _ = k1[2]
        if not (np.all(np.isfinite(rho)) and all(np.all(np.isfinite(a)) for a in u)):
            raise SolverHalt("non-finite values", t)
        full = step % guard_every == 0 or step == n_steps
        gmax, rmin, curl, s0 = diagnostics(uh, k1[2], full, grads_l[-1])
        if rmin < -1e-10:
            raise SolverHalt(f"negative density {rmin:.3g}", t)
        mass = float(rh[(0,) * d].real * grid.cell_volume)
        if check_mass and forcing is None and abs(mass - mass0) > 1e-8 * abs(mass0):
            raise SolverHalt(f"mass drift {mass - mass0:.3g}", t)
        times.append(t)
        masses.append(mass)
        grads_l.append(gmax)
        mins.append(rmin)
        curls.append(curl)
        if probe_mode is not None:
            probes.append(rh[pidx] / grid.size)
        if step % save_every == 0 or step == n_steps:
            states.append(make_state(rho, u, init.time + t))
        if gmax > threshold:
            halted = f"blow-up guard: max|grad u| = {gmax:.3g} > {threshold:.3g}"
            guard_time = t
            if states[-1].time != init.time + t:
                states.append(make_state(rho, u, init.time + t))
            break
    return FluidTrajectory(
        states=states, dt=dt, save_every=save_every, times=np.array(times),
        mass=np.array(masses), max_grad_u=np.array(grads_l), min_rho=np.array(mins),
        max_curl=np.array(curls), probe=np.array(probes) if probe_mode is not None else None,
        halted=halted, guard_time=guard_time, coulomb_analogue=grid.dim != 3,
    )


def measure_frequency(times: np.ndarray, signal: np.ndarray) -> float:
    """Angular frequency from the mean spacing of interpolated zero crossings.

    Each crossing is located by a cubic through the four samples around the
    sign change.
    """
    s = np.asarray(signal, dtype=float)
    t = np.asarray(times, dtype=float)
    s = s - 0.5 * (s.max() + s.min())
    crossings = []
    for i in np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]:
        lo, hi = max(i - 1, 0), min(i + 3, s.size)
        coef = np.polyfit(t[lo:hi] - t[i], s[lo:hi], min(3, hi - lo - 1))
        roots = np.roots(coef)
        roots = roots[np.isreal(roots)].real
        roots = roots[(roots >= 0) & (roots <= t[i + 1] - t[i])]
        if roots.size:
            crossings.append(t[i] + roots[0])
    if len(crossings) < 2:
        raise ConfigurationError("signal has fewer than two zero crossings")
    half_period = np.mean(np.diff(crossings))
    return float(np.pi / half_period)


def momentum_form_residual(traj: FluidTrajectory, params: PhysicalParams,
                           forcing: Optional[Callable] = None, rho_floor: float = 1e-12,
                           return_series: bool = False):
    """Sup over interior snapshots of the L2 residual of the momentum form.

    The residual ``d_t J + div(J x J / rho) + grad(b0 rho^2 / 2) + kappa rho grad(V_c * rho)``
    is evaluated with spectral space derivatives and centred differences over
    the snapshot spacing.  With ``forcing``, the injected momentum source
    ``rho f_u + u f_rho`` is subtracted.
    """
    states = traj.states
    if len(states) < 3:
        raise ConfigurationError("need at least three snapshots")
    grid = traj.grid
    dts = np.diff([s.time for s in states])
    if np.ptp(dts) > 1e-9 * dts.mean():
        raise ConfigurationError("snapshots must be equally spaced")
    tau = dts.mean()
    sp = _Spectral(grid)
    d = grid.dim
    pot_c = params.kappa * _coulomb_half(grid, _softening(params, grid))
    out = []
    for n in range(1, len(states) - 1):
        s = states[n]
        rho = s.rho.samples
        if rho.min() <= rho_floor:
            raise ConfigurationError("vacuum: density below floor, residual undefined")
        u = s.u.samples
        J = rho[None] * u
        dJ = (states[n + 1].momentum().samples - states[n - 1].momentum().samples) / (2 * tau)
        rh = sp.fwd(rho)
        phi_grad = sp.grad(pot_c * rh)
        p_grad = sp.grad(sp.fwd(0.5 * params.b0 * rho * rho))
        res = []
        for i in range(d):
            flux = sum(1j * sp.k[j] * sp.fwd(J[i] * J[j] / rho) for j in range(d))
            r_i = dJ[i] + sp.inv(flux) + p_grad[i] + rho * phi_grad[i]
            if forcing is not None:
                fr, fu = forcing(s.time)
                r_i = r_i - (rho * fu[i] + u[i] * fr)
            res.append(r_i)
        out.append(np.sqrt(grid.cell_volume * sum(np.sum(r * r) for r in res)))
    out = np.array(out)
    return (float(out.max()), out) if return_series else float(out.max())


def export_trajectory_json(traj: FluidTrajectory, path) -> None:
    """Snapshots keyed by time (density and velocity as nested lists)."""
    data = {
        "dt": traj.dt,
        "coulomb_analogue": traj.coulomb_analogue,
        "halted": traj.halted,
        "snapshots": [
            {"time": s.time, "rho": s.rho.samples.tolist(), "u": s.u.samples.tolist()}
            for s in traj.states
        ],
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
