"""Zero-energy scattering solution ``w`` of ``(-hbar^2 Lap + V_N / N)(1 - w) = 0``.

The problem is radial and three dimensional.  In the scaled variable
``s = N**beta * r`` it depends on the single coupling
``eps = N**(beta - 1) / hbar**2``:

    w(s) = eps * [ (1/s) int_0^s V f s'^2 ds' + int_s^R V f s' ds' ],   f = 1 - w,

which is the radial form of ``w = (1/(4 pi N hbar^2)) * (1/|x|) * (V_N f)``.
Outside the support ``s >= R`` the solution is exactly ``c_s / s``.

Two independent solvers are provided.  The integral form is discretised by a
Nystrom method on graded Gauss-Legendre panels and solved by fixed-point
iteration.  The radial ODE ``u'' = eps V u`` for ``u = s f`` is integrated by a
high-order Runge-Kutta scheme and normalised at the edge of the support.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .fields import (
    ConfigurationError, GridSpec, PhysicalParams, ScalarField, RESOLUTION_FACTOR,
)

__all__ = [
    "StrongCouplingError",
    "ScatteringProfile",
    "ScatteringBoundReport",
    "solve_scattering",
    "solve_scattering_ode",
    "verify_scattering_bounds",
    "sweep_scattering_bounds",
    "correlation_field",
    "born_approximation",
    "coupling",
    "export_profile_csv",
]

_PANEL_ORDER = 24


class StrongCouplingError(RuntimeError):
    """The fixed-point map for ``w`` fails to contract (sup of an iterate >= 1)."""


def coupling(params: PhysicalParams) -> float:
    """Dimensionless coupling ``N**(beta-1) / hbar**2``."""
    return float(params.n_particles) ** (params.beta - 1.0) / params.hbar ** 2


def _panel_breaks(radius: float) -> np.ndarray:
    # uniform on the bulk of the support, geometric grading towards its edge
    # where the profile flattens out exponentially
    bulk = np.linspace(0.0, 0.5 * radius, 7)
    edge = radius - 0.5 * radius * 0.5 ** np.arange(1, 9)
    return np.concatenate([bulk, edge, [radius]])


@dataclass(frozen=True)
class _Panels:
    breaks: np.ndarray
    nodes: np.ndarray          # (n_panels, order)
    weights: np.ndarray        # (n_panels, order)
    cumulative: np.ndarray     # (n_panels, order, order), running integral matrices
    inv_vander: np.ndarray     # maps nodal values to Legendre coefficients

    @property
    def flat_nodes(self) -> np.ndarray:
        return self.nodes.ravel()


def _build_panels(radius: float, order: int = _PANEL_ORDER) -> _Panels:
    t, wt = np.polynomial.legendre.leggauss(order)
    vander = np.polynomial.legendre.legvander(t, order - 1)
    inv_v = np.linalg.inv(vander)
    # running integral on the reference panel: S[i, j] = int_{-1}^{t_i} l_j
    ref = np.empty((order, order))
    for j in range(order):
        c = np.polynomial.legendre.legint(inv_v[:, j], lbnd=-1.0)
        ref[:, j] = np.polynomial.legendre.legval(t, c)
    breaks = _panel_breaks(radius)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b)[:, None] + half[:, None] * t[None, :]
    weights = half[:, None] * wt[None, :]
    cumulative = half[:, None, None] * ref[None, :, :]
    return _Panels(breaks, nodes, weights, cumulative, inv_v)


def _running_integral(panels: _Panels, g: np.ndarray) -> np.ndarray:
    """``int_0^{s_i} g`` at every node, ``g`` given on the flat node array."""
    gp = g.reshape(panels.nodes.shape)
    local = np.einsum("pij,pj->pi", panels.cumulative, gp)
    totals = np.sum(panels.weights * gp, axis=1)
    offsets = np.concatenate([[0.0], np.cumsum(totals)[:-1]])
    return (local + offsets[:, None]).ravel()


def _operator_matrix(panels: _Panels, vvals: np.ndarray) -> np.ndarray:
    """Matrix ``M`` with ``(M f)_i = (1/s_i) int_0^{s_i} V f s^2 + int_{s_i}^R V f s``."""
    s = panels.flat_nodes
    n = s.size
    eye = np.eye(n)
    mat = np.empty((n, n))
    w_all = panels.weights.ravel()
    for j in range(n):
        e = eye[j] * vvals
        a = _running_integral(panels, e * s * s)
        cb = _running_integral(panels, e * s)
        tb = w_all[j] * e[j] * s[j]
        mat[:, j] = a / s + (tb - cb)
    return mat


def _interp_panels(panels: _Panels, values: np.ndarray, s: np.ndarray) -> np.ndarray:
    vals = values.reshape(panels.nodes.shape)
    coef = vals @ panels.inv_vander.T          # (n_panels, order)
    s = np.asarray(s, dtype=float)
    idx = np.clip(np.searchsorted(panels.breaks, s, side="right") - 1, 0, len(panels.breaks) - 2)
    a, b = panels.breaks[idx], panels.breaks[idx + 1]
    t = (2.0 * s - a - b) / (b - a)
    out = np.empty_like(s)
    for p in np.unique(idx):
        m = idx == p
        out[m] = np.polynomial.legendre.legval(t[m], coef[p])
    return out


@dataclass(frozen=True, eq=False)
class ScatteringProfile:
    """Radial samples of ``w`` and ``f = 1 - w``.

    Attributes
    ----------
    params : PhysicalParams
    radii : ndarray
        Increasing physical radii, starting at 0.
    w_values, f_values, dw_values : ndarray
        ``w(r)``, ``1 - w(r)`` and ``w'(r)`` on ``radii``.
    tail_coefficient : float
        ``c`` with ``w(r) = c / r`` outside the support of ``V_N``.
    iterations : int
        Fixed-point iterations used.
    residual : float
        Sup-norm residual of the integral equation at convergence.
    method : str
    """

    params: PhysicalParams
    radii: np.ndarray
    w_values: np.ndarray
    f_values: np.ndarray
    dw_values: np.ndarray
    tail_coefficient: float
    iterations: int = 0
    residual: float = 0.0
    tolerance: float = 1e-10
    method: str = "fixed-point"
    coupling: float = 0.0
    _node_w: Optional[np.ndarray] = field(default=None, repr=False)
    _panels: Optional[_Panels] = field(default=None, repr=False)

    @property
    def correlation_length(self) -> float:
        return self.params.correlation_length

    @property
    def analogue(self) -> bool:
        return self.params.dim != 3

    def w(self, r) -> np.ndarray:
        """Evaluate ``w`` at arbitrary physical radii."""
        r = np.abs(np.asarray(r, dtype=float))
        s = r / self.correlation_length
        R = self.params.v_profile.radius
        out = np.empty_like(s)
        outside = s >= R
        c_s = self.tail_coefficient / self.correlation_length
        out[outside] = c_s / s[outside]
        inside = ~outside
        if np.any(inside):
            if self._node_w is None:
                out[inside] = np.interp(r[inside], self.radii, self.w_values)
            else:
                out[inside] = _interp_panels(self._panels, self._node_w, s[inside])
        return out

    def f(self, r) -> np.ndarray:
        return 1.0 - self.w(r)

    def to_rows(self):
        rep = _bound_ratios(self)
        for i, r in enumerate(self.radii):
            yield (r, self.w_values[i], self.f_values[i], rep[0][i], rep[1][i])


def _radial_mesh(params: PhysicalParams, r_max: float, n_log: int) -> np.ndarray:
    ell = params.correlation_length
    log_part = ell * np.logspace(np.log10(1.0 / 64.0), np.log10(64.0), n_log)
    top = log_part[-1]
    parts = [[0.0], log_part]
    if r_max > top:
        parts.append(np.linspace(top, r_max, 65)[1:])
    return np.concatenate(parts)


def _profile_from_nodes(params, panels, node_w, eps, r_max, n_log, **meta) -> ScatteringProfile:
    ell = params.correlation_length
    R = params.v_profile.radius
    s = panels.flat_nodes
    vvals = params.v_profile.value(s)
    g = vvals * (1.0 - node_w)
    a_run = _running_integral(panels, g * s * s)
    a_total = float(np.sum(panels.weights.ravel() * g * s * s))
    b_total = float(np.sum(panels.weights.ravel() * g * s))
    c_s = eps * a_total
    radii = _radial_mesh(params, r_max, n_log)
    sr = radii / ell
    w = np.empty_like(sr)
    dws = np.empty_like(sr)
    outside = sr >= R
    w[outside] = c_s / sr[outside]
    dws[outside] = -c_s / sr[outside] ** 2
    inside = ~outside
    w[inside] = _interp_panels(panels, node_w, sr[inside])
    a_in = _interp_panels(panels, a_run, sr[inside])
    with np.errstate(divide="ignore", invalid="ignore"):
        dws[inside] = np.where(sr[inside] > 0, -eps * a_in / sr[inside] ** 2, 0.0)
    zero = sr == 0
    w[zero] = eps * b_total
    return ScatteringProfile(
        params=params, radii=radii, w_values=w, f_values=1.0 - w,
        dw_values=dws / ell, tail_coefficient=c_s * ell, coupling=eps,
        _node_w=node_w, _panels=panels, **meta,
    )


def solve_scattering(params: PhysicalParams, tolerance: float = 1e-10,
                     max_iter: int = 2000, r_max: float = 1.0,
                     n_log: int = 257) -> ScatteringProfile:
    """Solve the scattering equation by fixed-point iteration of its integral form.

    Parameters
    ----------
    params : PhysicalParams
        Supplies ``N``, ``hbar``, ``beta`` and the profile ``V``.
    tolerance : float
        Target sup-norm residual of ``w - eps T[V (1 - w)]``.
    max_iter : int
        Iteration cap; hitting it is treated as loss of contraction.
    r_max : float
        Outer radius of the exported mesh.

    Raises
    ------
    StrongCouplingError
        If an iterate reaches ``sup w >= 1`` or the iteration stalls.
    ConfigurationError
        If the panel quadrature does not resolve ``V``.
    """
    if tolerance <= 0:
        raise ConfigurationError("tolerance must be positive")
    eps = coupling(params)
    profile = params.v_profile
    panels = _build_panels(profile.radius)
    s = panels.flat_nodes
    if profile.is_zero:
        node_w = np.zeros_like(s)
        return _profile_from_nodes(params, panels, node_w, eps, r_max, n_log,
                                   iterations=0, residual=0.0, tolerance=tolerance)
    vvals = profile.value(s)
    # the panels must integrate V to near machine precision
    mass = 4.0 * np.pi * np.sum(panels.weights.ravel() * vvals * s * s)
    if abs(mass / profile.integral(3) - 1.0) > 1e-11:
        raise ConfigurationError("interaction profile is not resolved by the radial panels")
    kmat = eps * _operator_matrix(panels, vvals)
    source = kmat.sum(axis=1)
    w = np.zeros_like(s)
    residual = np.inf
    for it in range(1, max_iter + 1):
        w_new = source - kmat @ w
        if np.max(w_new) >= 1.0 or not np.all(np.isfinite(w_new)):
            raise StrongCouplingError(
                f"strong-coupling regime: sup of iterate {it} reached {np.max(w_new):.3g} "
                f"(coupling N^(beta-1) hbar^-2 = {eps:.3g})"
            )
        w = w_new
        residual = float(np.max(np.abs(source - kmat @ w - w)))
        if residual <= tolerance:
            break
    else:
        raise StrongCouplingError(
            f"strong-coupling regime: no contraction after {max_iter} iterations "
            f"(residual {residual:.3g}, coupling {eps:.3g})"
        )
    return _profile_from_nodes(params, panels, w, eps, r_max, n_log,
                               iterations=it, residual=residual, tolerance=tolerance)


def solve_scattering_ode(params: PhysicalParams, tolerance: float = 1e-10,
                         r_max: float = 1.0, n_log: int = 257) -> ScatteringProfile:
    """Shooting solution of ``u'' = eps V u`` with ``u = s f``, ``u(0) = 0``."""
    eps = coupling(params)
    R = params.v_profile.radius
    panels = _build_panels(R)
    s_nodes = panels.flat_nodes
    if params.v_profile.is_zero:
        return _profile_from_nodes(params, panels, np.zeros_like(s_nodes), eps, r_max, n_log,
                                   method="ode", tolerance=tolerance)
    vfun = params.v_profile.value

    def rhs(s, y):
        return [y[1], eps * float(vfun(s)) * y[0]]

    sol = solve_ivp(rhs, (0.0, R), [0.0, 1.0], method="DOP853",
                    rtol=min(1e-13, tolerance * 1e-3), atol=1e-16,
                    t_eval=np.concatenate([s_nodes, [R]]))
    if not sol.success:
        raise ConfigurationError(f"radial ODE integration failed: {sol.message}")
    u = sol.y[0, :-1]
    slope = sol.y[1, -1]
    node_w = 1.0 - u / (s_nodes * slope)
    if np.max(node_w) >= 1.0:
        raise StrongCouplingError("strong-coupling regime: ODE solution violates w < 1")
    return _profile_from_nodes(params, panels, node_w, eps, r_max, n_log,
                               method="ode", tolerance=tolerance)


def born_approximation(params: PhysicalParams, r) -> np.ndarray:
    """First Born term ``(1/(4 pi N hbar^2)) int V_N(y) / |x - y| dy`` by adaptive quadrature."""
    from scipy.integrate import quad

    eps = coupling(params)
    ell = params.correlation_length
    V = params.v_profile
    R = V.radius
    out = []
    for ri in np.atleast_1d(np.asarray(r, dtype=float)):
        s = ri / ell
        lo = min(s, R)
        inner = quad(lambda t: float(V.value(t)) * t * t, 0.0, lo, epsabs=0, epsrel=1e-13, limit=200)[0] if lo > 0 else 0.0
        outer = quad(lambda t: float(V.value(t)) * t, lo, R, epsabs=0, epsrel=1e-13, limit=200)[0] if lo < R else 0.0
        out.append(eps * ((inner / s if s > 0 else 0.0) + outer))
    return np.array(out)


def _bound_ratios(profile: ScatteringProfile):
    p = profile.params
    nh2 = p.n_particles * p.hbar ** 2
    ell = p.correlation_length
    r = profile.radii
    rw = nh2 * (r + ell) * profile.w_values
    rdw = nh2 * (r * r + ell * ell) * np.abs(profile.dw_values)
    return rw, rdw


@dataclass(frozen=True)
class ScatteringBoundReport:
    """Normalised sups of ``w`` and ``|w'|`` against the scattering bounds."""

    sup_w: float
    sup_dw: float
    bound_constant: float
    within_bound_constant: bool
    passed: bool
    coupling: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def bound_constant(params: PhysicalParams) -> float:
    """``c0 (||V||_1 + ||<y> V||_{3/2})`` with ``c0 = 1 / (2 pi)``."""
    V = params.v_profile
    nodes, weights = V._radial_nodes()
    weighted = np.sqrt(1.0 + nodes ** 2) * V.value(nodes)
    l32 = (4.0 * np.pi * np.sum(weights * weighted ** 1.5 * nodes ** 2)) ** (2.0 / 3.0)
    return float((V.integral(3) + l32) / (2.0 * np.pi))


def verify_scattering_bounds(profile: ScatteringProfile) -> ScatteringBoundReport:
    """Normalised sups ``N hbar^2 (r + N^-beta) w`` and ``N hbar^2 (r^2 + N^-2beta) |w'|``."""
    rw, rdw = _bound_ratios(profile)
    sw, sdw = float(np.max(rw)), float(np.max(rdw))
    c = bound_constant(profile.params)
    ok = bool(np.isfinite(sw) and np.isfinite(sdw))
    return ScatteringBoundReport(
        sup_w=sw, sup_dw=sdw, bound_constant=c,
        within_bound_constant=bool(sw <= c and sdw <= c),
        passed=ok, coupling=profile.coupling,
    )


def sweep_scattering_bounds(base: PhysicalParams, betas, ns, hbars,
                         regime: float = 0.1, tolerance: float = 1e-10,
                         spread_limit: float = 2.0) -> dict:
    """Run the bound check across a parameter sweep restricted to ``eps < regime``.

    Returns a dict with the per-instance rows, the spreads ``max / min`` of the
    two sups and an overall ``passed`` flag (both spreads below ``spread_limit``).
    """
    rows = []
    for beta in betas:
        for n in ns:
            for hbar in hbars:
                p = base.replace(n_particles=int(n), hbar=float(hbar), beta=float(beta))
                eps = coupling(p)
                if eps >= regime:
                    continue
                rep = verify_scattering_bounds(solve_scattering(p, tolerance))
                rows.append(dict(beta=beta, n=int(n), hbar=float(hbar), coupling=eps,
                                 sup_w=rep.sup_w, sup_dw=rep.sup_dw,
                                 within_bound_constant=rep.within_bound_constant))
    if not rows:
        raise ConfigurationError("no sweep point lies inside the admissible regime")
    sw = np.array([r["sup_w"] for r in rows])
    sd = np.array([r["sup_dw"] for r in rows])
    spread_w = float(sw.max() / sw.min()) if sw.min() > 0 else (1.0 if sw.max() == 0 else np.inf)
    spread_dw = float(sd.max() / sd.min()) if sd.min() > 0 else (1.0 if sd.max() == 0 else np.inf)
    return dict(rows=rows, constant_w=float(sw.max()), constant_dw=float(sd.max()),
                spread_w=spread_w, spread_dw=spread_dw,
                passed=bool(spread_w < spread_limit and spread_dw < spread_limit))


def correlation_field(profile: ScatteringProfile, grid: GridSpec) -> ScalarField:
    """Samples of ``1 - w(x)`` on the minimum-image relative-coordinate grid.

    In dimensions one and two the three-dimensional radial solution is
    evaluated at ``|x|``, an analogue of the physical correlation factor.
    """
    p = profile.params
    if not p.v_profile.is_zero and p.correlation_length < RESOLUTION_FACTOR * grid.h * (1 - 1e-12):
        raise ConfigurationError(
            f"correlation scale N^-beta={p.correlation_length:.4g} unresolved by h={grid.h:.4g}"
        )
    return ScalarField(grid, profile.f(grid.centered_radius()))


def export_profile_csv(profile: ScatteringProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "w", "f", "ratio_w", "ratio_dw"])
        for row in profile.to_rows():
            writer.writerow([f"{v:.17g}" for v in row])
