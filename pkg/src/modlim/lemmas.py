"""Randomised stress tests of the auxiliary inequalities.

Each suite returns an :class:`InequalityReport` holding the worst observed
ratio of left side to the bound, a fitted rate where the statement has one,
and a pass flag.  An existential constant "C" is read as: the fitted constant
does not grow by more than a factor two along the sweep.

Two-particle quadratic forms are evaluated exactly on trigonometric
polynomials.  For ``phi = sum_a c(a1, a2) exp(i (a1.x1 + a2.x2))`` on a
periodic box,

    <K(x1 - x2) phi, psi> = L^3 sum_{a, b : a1 + a2 = b1 + b2} c(a) conj(d(b)) K_hat(a1 - b1),

so no grid has to resolve the short-range kernel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .fields import (
    ConfigurationError, GridSpec, PhysicalParams, ScalarField, VectorField, VProfile, div, sample_vn,
)
from .modenergy import SlopeFit, _pair_velocity_form, fit_loglog, gaussian_gn
from .nbody import MEMORY_LIMIT, _pair_lookup
from .scattering import coupling, solve_scattering

__all__ = [
    "InequalityReport",
    "GaussianProfile",
    "PairMarginals",
    "apply_w_n",
    "pair_form",
    "pair_overlaps",
    "mixed_sobolev_form",
    "verify_mollifier_rate",
    "verify_operator_inequalities",
    "verify_poincare",
    "cancellation_lhs",
    "cancellation_radial",
    "verify_cancellation_structure",
    "reduced_form",
    "empirical_form",
    "verify_reduced_inequality",
    "verify_two_body_lower",
    "trial_rngs",
]

R2_MIN = 0.98


@dataclass
class InequalityReport:
    """Outcome of one randomised inequality suite.

    Attributes
    ----------
    name : str
    trials : int
        Trials per sweep point.
    worst_ratio : float
        Largest ``lhs / bound`` over all trials and sweep points.
    fitted_rate : float
        Fitted decay exponent (NaN when the statement has none).
    passed : bool
    r_squared : float
        Coefficient of determination of the rate fit (NaN if none).
    sweep : list of float
        Sweep variable (``N`` or ``epsilon``).
    constants : list of float
        Worst normalised constant at each sweep point.
    excluded : int
        Sweep points dropped by a guard.
    details : dict
        Suite-specific diagnostics.
    """

    name: str
    trials: int
    worst_ratio: float
    fitted_rate: float = float("nan")
    passed: bool = False
    r_squared: float = float("nan")
    sweep: List[float] = field(default_factory=list)
    constants: List[float] = field(default_factory=list)
    excluded: int = 0
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)

    def summary_line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        rate = "" if np.isnan(self.fitted_rate) else f" rate={self.fitted_rate:.4g}"
        return f"{tag} {self.name}: worst_ratio={self.worst_ratio:.4g}{rate} trials={self.trials}"


def trial_rngs(seed: int, trials: int) -> List[np.random.Generator]:
    """Independent per-trial generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def _uniform(constants: Sequence[float], factor: float = 2.0, floor: float = 1e-13) -> bool:
    """Constants along a sweep never exceed ``factor`` times the first one."""
    c = np.asarray(constants, dtype=float)
    if not np.all(np.isfinite(c)):
        return False
    if c.max() <= floor:
        return True
    return bool(c.max() <= factor * max(c[0], floor))


def _fit_decay(x, y) -> SlopeFit:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        return SlopeFit(float("nan"), float("nan"), 0.0)
    return fit_loglog(x, y)


# ---------------------------------------------------------------------------
# mollifier rate

def apply_w_n(f: ScalarField, v_profile: VProfile, n_particles: float, beta: float) -> ScalarField:
    """``(V_N - b0 delta) * f`` on a periodic 3D grid, with ``b0 = int V``."""
    grid = f.grid
    if grid.dim != 3:
        raise ConfigurationError("W_N is applied in three dimensions")
    k = np.sqrt(grid.k_squared)
    mult = v_profile.fourier(k / n_particles ** beta, 3) - v_profile.fourier(np.zeros(1), 3)[0]
    return ScalarField(grid, np.fft.ifftn(mult * np.fft.fftn(f.samples)).real)


def verify_mollifier_rate(v_profile: VProfile, s: float, p: float = 2.0, beta: float = 0.5,
                          n_values: Optional[Sequence[float]] = None, trials: int = 100,
                          seed: int = 0, grid: Optional[GridSpec] = None) -> InequalityReport:
    """Rate of ``||W_N * f||_p <= C N^(-beta s) ||<grad>^s f||_p`` with ``W_N = V_N - b0 delta``.

    Test functions are band-limited to an octave shell ``k_c <= |k| <= 2 k_c``
    with spectrum ``(|k|/k_c)^-3`` inside and random phases; the cutoffs
    ``k_c`` are stratified log-uniform draws over the grid band.
    For ``p = 2`` the norms are evaluated by Parseval; otherwise in real space.

    Raises
    ------
    ConfigurationError
        If the grid cannot represent the largest wavenumber ``N^beta`` of
        interest, or for inadmissible ``s`` or ``p``.
    """
    if not 0.0 <= s <= 1.0:
        raise ConfigurationError("s must lie in [0, 1]")
    if not p > 1.0:
        raise ConfigurationError("p must exceed 1")
    grid = GridSpec(3, 128, np.pi) if grid is None else grid
    ns = np.asarray(2.0 ** np.arange(5, 14) if n_values is None else n_values, dtype=float)
    if grid.dim != 3:
        raise ConfigurationError("the mollifier rate is checked in three dimensions")
    if ns.max() ** beta > grid.k_max:
        raise ConfigurationError(
            f"unresolved V_N: N^beta = {ns.max() ** beta:.3g} exceeds the grid cutoff {grid.k_max:.3g}")
    b0 = float(v_profile.fourier(0.0, 3))
    k2 = grid.k_squared
    uk2, inverse = np.unique(k2, return_inverse=True)
    uk = np.sqrt(uk2)
    counts = np.bincount(inverse.ravel())
    kmin = 2 * np.pi / grid.box_length
    rngs = trial_rngs(seed, trials)
    # one jittered cutoff per logarithmic stratum keeps the band densely covered
    span = np.log(0.5 * grid.k_max / kmin)
    cutoffs = [kmin * np.exp(span * (t + r.uniform()) / trials) for t, r in enumerate(rngs)]
    phases = None
    if p != 2.0:
        phases = [np.exp(2j * np.pi * r.uniform(size=grid.shape)) for r in rngs]
    worst = []
    for n in ns:
        mult = (v_profile.fourier(uk / n ** beta, 3) - b0)
        weight = (1.0 + uk2) ** (s / 2.0)
        best = 0.0
        for t, kc in enumerate(cutoffs):
            amp = np.where((uk >= kc) & (uk <= 2 * kc), (np.maximum(uk, kc) / kc) ** -3.0, 0.0)
            if p == 2.0:
                num = np.sum(counts * (amp * mult) ** 2)
                den = np.sum(counts * (amp * weight) ** 2)
                ratio = np.sqrt(num / den)
            else:
                fh = amp[inverse] * phases[t]
                wf = np.fft.ifftn(fh * mult[inverse]).real
                sf = np.fft.ifftn(fh * weight[inverse]).real
                ratio = np.sum(np.abs(wf) ** p) ** (1 / p) / np.sum(np.abs(sf) ** p) ** (1 / p)
            best = max(best, float(ratio))
        worst.append(best)
    worst = np.array(worst)
    target = beta * s
    consts = worst * ns ** target
    details = {"s": s, "p": p, "beta": beta, "target_rate": target}
    if s == 0.0:
        fit = SlopeFit(0.0, float("nan"), float("nan"))
        bound = 2.0 * v_profile.lp_norm(1.0, 3)
        passed = bool(np.all(worst <= bound))
        details["young_bound"] = bound
    else:
        fit = _fit_decay(ns, worst)
        passed = bool(-fit.slope >= 0.95 * target and fit.r_squared >= R2_MIN and _uniform(consts))
    return InequalityReport(name=f"mollifier-rate s={s:g} p={p:g}", trials=trials,
                            worst_ratio=float(consts.max()), fitted_rate=float(-fit.slope),
                            passed=passed, r_squared=fit.r_squared, sweep=list(map(float, ns)),
                            constants=list(map(float, consts)), details=details)


# ---------------------------------------------------------------------------
# exact two-particle forms on trigonometric polynomials

def _random_coefficients(rng: np.random.Generator, band: int, decay: float = 3.0) -> np.ndarray:
    """Coefficients ``c(a1, a2)`` over ``|a_i|_inf <= band`` with ``|k|^-decay`` falloff."""
    ax = np.arange(-band, band + 1)
    m = np.stack(np.meshgrid(*([ax] * 6), indexing="ij"))
    k1 = np.sqrt(np.sum(m[:3] ** 2, axis=0))
    k2 = np.sqrt(np.sum(m[3:] ** 2, axis=0))
    amp = ((1.0 + k1) * (1.0 + k2)) ** (-decay)
    shape = amp.shape
    return amp * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def _mode_norms(band: int, box: float):
    ax = 2 * np.pi / box * np.arange(-band, band + 1)
    m = np.stack(np.meshgrid(*([ax] * 6), indexing="ij"))
    return np.sum(m[:3] ** 2, axis=0), np.sum(m[3:] ** 2, axis=0)


def _check_band(band: int) -> None:
    if (6 * band + 1) ** 6 > MEMORY_LIMIT:
        raise ConfigurationError(f"memory guard: band {band} needs {(6 * band + 1) ** 6} modes")


def pair_overlaps(c: np.ndarray, d: np.ndarray, box: float):
    """Kernel-independent part of the pair form: ``(|k|, overlap)`` per shift ``k = a1 - b1``.

    The form is ``L^3 sum_k K_hat(|k|) overlap(k)`` with
    ``overlap(k) = sum_a c(a1, a2) conj d(a1 - k, a2 + k)``.
    """
    band = (c.shape[0] - 1) // 2
    pad = 2 * band
    dp = np.pad(d, pad)
    n = 2 * band + 1
    shifts = np.arange(-2 * band, 2 * band + 1)
    qs, vals = [], []
    for kx in shifts:
        for ky in shifts:
            for kz in shifts:
                k = (int(kx), int(ky), int(kz))
                sl = tuple(slice(pad - v, pad - v + n) for v in k) \
                    + tuple(slice(pad + v, pad + v + n) for v in k)
                qs.append(2 * np.pi / box * np.sqrt(kx * kx + ky * ky + kz * kz))
                vals.append(np.vdot(dp[sl], c))
    return np.array(qs), np.array(vals)


def pair_form(c: np.ndarray, d: np.ndarray, khat: Callable[[np.ndarray], np.ndarray],
               box: float, overlaps=None) -> complex:
    """``<K(x1 - x2) phi, psi>`` for coefficient arrays ``c`` (phi) and ``d`` (psi)."""
    qs, vals = pair_overlaps(c, d, box) if overlaps is None else overlaps
    return complex(box ** 3 * np.sum(khat(qs) * vals))


def mixed_sobolev_form(c: np.ndarray, box: float) -> float:
    """``<(1 - Lap_1)(1 - Lap_2) phi, phi>`` by Parseval."""
    band = (c.shape[0] - 1) // 2
    k1, k2 = _mode_norms(band, box)
    return float(box ** 6 * np.sum((1 + k1) * (1 + k2) * np.abs(c) ** 2))


def _sobolev1(c: np.ndarray, box: float) -> float:
    band = (c.shape[0] - 1) // 2
    k1, _ = _mode_norms(band, box)
    return float(box ** 6 * np.sum((1 + k1) * np.abs(c) ** 2))


def verify_operator_inequalities(v_profile: VProfile, params: PhysicalParams, trials: int = 100,
                                 n_values: Optional[Sequence[float]] = None, band: int = 2,
                                 box: float = 2 * np.pi, seed: int = 0) -> InequalityReport:
    """The three quadratic-form bounds for ``V_N(x1 - x2)`` on two-particle functions.

    Ratios ``<V_N phi, phi>`` over ``||V||_1 <S2 phi, phi>``,
    ``||V_N||_{3/2} <S1 phi, phi>`` and ``||V_N||_inf ||phi||^2`` (with
    ``S1 = 1 - Lap_1``, ``S2 = (1 - Lap_1)(1 - Lap_2)``) are recorded over an
    ``N``-sweep; the last two decay like ``N^-beta`` and ``N^(-3 beta)`` once
    ``V_N`` is effectively local, which is checked by slope fits.
    """
    if params.dim != 3:
        raise ConfigurationError("the operator inequalities are stated in three dimensions")
    _check_band(band)
    beta = params.beta
    ns = np.asarray(2.0 ** np.arange(6, 15, 2) if n_values is None else n_values, dtype=float)
    if v_profile.is_zero:
        return InequalityReport(name="operator-inequalities", trials=trials, worst_ratio=0.0,
                                passed=True, sweep=list(map(float, ns)), constants=[0.0] * len(ns),
                                details={"band": band, "reason": "identically zero potential"})
    l1 = v_profile.lp_norm(1.0, 3)
    l32 = v_profile.lp_norm(1.5, 3)
    linf = float(np.max(np.abs(v_profile.value(np.linspace(0, v_profile.radius, 2001)))))
    coeffs = [_random_coefficients(r, band) for r in trial_rngs(seed, trials)]
    norms = [(mixed_sobolev_form(c, box), _sobolev1(c, box), float(box ** 6 * np.sum(np.abs(c) ** 2)))
             for c in coeffs]
    overlaps = [pair_overlaps(c, c, box) for c in coeffs]
    uq, inv = np.unique(np.round(overlaps[0][0], 12), return_inverse=True)
    worst = np.zeros((len(ns), 3))
    for i, n in enumerate(ns):
        kvals = v_profile.fourier(uq / n ** beta, 3)[inv]
        for ov, (s2, s1, s0) in zip(overlaps, norms):
            lhs = abs(box ** 3 * np.sum(kvals * ov[1]))
            ratios = (lhs / (l1 * s2), lhs / (n ** beta * l32 * s1), lhs / (n ** (3 * beta) * linf * s0))
            worst[i] = np.maximum(worst[i], ratios)
    fits = [_fit_decay(ns, worst[:, j]) for j in (1, 2)]
    rate_ok = (abs(-fits[0].slope - beta) <= 0.1 * beta and abs(-fits[1].slope - 3 * beta) <= 0.3 * beta
               and min(f.r_squared for f in fits) >= R2_MIN)
    consts = [worst[:, 0], worst[:, 1] * ns ** beta, worst[:, 2] * ns ** (3 * beta)]
    passed = bool(_uniform(consts[0]) and rate_ok)
    return InequalityReport(
        name="operator-inequalities", trials=trials, worst_ratio=float(worst[:, 0].max()),
        fitted_rate=float(-fits[0].slope), passed=passed, r_squared=fits[0].r_squared,
        sweep=list(map(float, ns)), constants=list(map(float, consts[0])),
        details={"ratio_l1": worst[:, 0].tolist(), "ratio_l32": worst[:, 1].tolist(),
                 "ratio_linf": worst[:, 2].tolist(), "slope_l32": fits[0].slope,
                 "slope_linf": fits[1].slope, "r2_linf": fits[1].r_squared, "band": band},
    )


@dataclass(frozen=True)
class GaussianProfile:
    """``f(x) = pi^(-3/2) exp(-|x|^2)``, with ``f_hat(q) = exp(-|q|^2 / 4)``."""

    def fourier(self, q, dim: int = 3) -> np.ndarray:
        return np.exp(-np.asarray(q, dtype=float) ** 2 / 4.0)

    def integral(self, dim: int = 3) -> float:
        return 1.0


def verify_poincare(f_profile, theta: float, trials: int = 100,
                    eps_values: Optional[Sequence[float]] = None, band: int = 2,
                    box: float = 2 * np.pi, seed: int = 0, pairs=None) -> InequalityReport:
    """``|<(f_eps(x - y) - d0 delta) phi, psi>| <= C eps^theta <S2 phi, phi>^(1/2) <S2 psi, psi>^(1/2)``.

    Here ``f_eps(x) = eps^-3 f(x / eps)`` and ``d0 = int f``.  The ratio
    without the ``eps^theta`` factor is fitted against ``eps``.

    Parameters
    ----------
    f_profile
        Any object with ``fourier(q, dim)``, e.g. :class:`GaussianProfile`
        or a :class:`~modlim.fields.VProfile`.
    pairs : sequence of (ndarray, ndarray), optional
        Explicit coefficient pairs ``(phi, psi)`` replacing the random trials.
    """
    if not 0.0 < theta < 0.5:
        raise ConfigurationError("theta must lie in (0, 1/2)")
    _check_band(band)
    eps = np.asarray(2.0 ** -np.arange(1, 9) if eps_values is None else eps_values, dtype=float)
    d0 = float(f_profile.fourier(np.array([0.0]), 3)[0])
    if pairs is None:
        pairs = []
        for r in trial_rngs(seed, trials):
            pairs.append((_random_coefficients(r, band), _random_coefficients(r, band)))
    norms = [np.sqrt(mixed_sobolev_form(a, box) * mixed_sobolev_form(b, box)) for a, b in pairs]
    overlaps = [pair_overlaps(a, b, box) for a, b in pairs]
    worst = np.zeros(len(eps))
    for i, e in enumerate(eps):
        khat = lambda q, e=e: f_profile.fourier(e * q, 3) - d0
        for ov, nm in zip(overlaps, norms):
            worst[i] = max(worst[i], abs(pair_form(None, None, khat, box, ov)) / nm)
    consts = worst / eps ** theta
    if np.all(worst == 0):
        fit = SlopeFit(float("inf"), float("nan"), 1.0)
        passed = True
    else:
        fit = _fit_decay(eps, worst)
        passed = bool(fit.slope >= 0.95 * theta and fit.r_squared >= R2_MIN and _uniform(consts))
    return InequalityReport(name=f"poincare theta={theta:g}", trials=len(pairs),
                            worst_ratio=float(consts.max()), fitted_rate=float(fit.slope),
                            passed=passed, r_squared=fit.r_squared, sweep=list(map(float, eps)),
                            constants=list(map(float, consts)), details={"theta": theta, "d0": d0})


# ---------------------------------------------------------------------------
# cancellation structure

def cancellation_lhs(rho2: np.ndarray, u: VectorField, params: PhysicalParams) -> float:
    """``int (u(x) - u(y)) . grad V_N(x - y) rho2 + int div u(x) V_N(x - y) rho2`` on a pair grid."""
    grid = u.grid
    if params.v_profile.is_zero:
        return 0.0
    kern = sample_vn(params, grid).samples
    d = grid.dim
    first = _pair_velocity_form(kern, u, rho2, grid)
    div_u = div(u).samples.reshape(grid.shape + (1,) * d)
    second = grid.cell_volume ** 2 * np.sum(div_u * _pair_lookup(kern, grid, 2, 0, 1) * rho2)
    return float(first + second)


_XG, _WG = np.polynomial.legendre.leggauss(48)


def _quad(fun, a: float, b: float, panels: int = 40) -> float:
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        x = 0.5 * (hi - lo) * _XG + 0.5 * (hi + lo)
        total += 0.5 * (hi - lo) * np.sum(_WG * fun(x))
    return float(total)


def cancellation_radial(params: PhysicalParams, width: float = 0.5, trace: float = 3.0,
                        profile=None) -> float:
    """Left side of the cancellation estimate for ``u = A x`` and a correlated Gaussian pair.

    The pair density is ``(1 - w(|x - y|))^2`` times a product of Gaussians of
    variance ``width^2`` per coordinate, normalised to one.  Only the relative
    coordinate matters; averaging ``(A z) . z`` over directions gives
    ``tr A |z|^2 / 3``, so the left side equals

        (tr A / Z) int 4 pi r^2 [ r V_N'(r) / 3 + V_N(r) ] F(r) dr,   F = (1 - w)^2 g,

    with ``g`` the Gaussian of the relative coordinate.  Integrating by parts
    turns the bracket into ``-(r^3 / 3) V_N F'`` with no ``V_N'``, which is
    where the cancellation shows.
    """
    sp = solve_scattering(params) if profile is None else profile
    support = params.v_profile.radius * params.correlation_length
    var = 2.0 * width ** 2

    def f_dens(r):
        return sp.f(r) ** 2 * np.exp(-r * r / (2 * var))

    z = _quad(lambda r: 4 * np.pi * r * r * f_dens(r), 0.0, support) \
        + _quad(lambda r: 4 * np.pi * r * r * f_dens(r), support, support + 12 * width)
    core = _quad(lambda r: 4 * np.pi * r * r * (r * params.vn_derivative(r) / 3.0 + params.vn_value(r))
                 * f_dens(r), 0.0, support)
    return trace * core / z


def verify_cancellation_structure(v_profile: VProfile, beta: float = 0.8, hbar: float = 1.0,
                                  n_values: Optional[Sequence[float]] = None, width: float = 0.5,
                                  trace: float = 3.0) -> InequalityReport:
    """Decay of the cancellation term against ``N^(beta-1) hbar^-6 + N^(-beta/2) hbar^-4``.

    Sweep points outside the regime ``N^(beta-1) hbar^-2 < 0.1`` are excluded
    and counted.  The fitted decay exponent must reach three quarters of
    ``min(1 - beta, beta/2)``.
    """
    ns = np.asarray(2.0 ** np.arange(17, 24) if n_values is None else n_values, dtype=float)
    kept, vals, bounds = [], [], []
    excluded = 0
    for n in ns:
        p = PhysicalParams(int(n), hbar, beta, v_profile=v_profile)
        if coupling(p) >= 0.1:
            excluded += 1
            continue
        kept.append(float(n))
        vals.append(abs(cancellation_radial(p, width, trace)))
        bounds.append(n ** (beta - 1) * hbar ** -6 + n ** (-beta / 2) * hbar ** -4)
    vals, bounds = np.array(vals), np.array(bounds)
    target = min(1 - beta, beta / 2)
    if len(kept) < 3:
        return InequalityReport(name="cancellation-structure", trials=len(kept),
                                worst_ratio=float("nan"), passed=False, excluded=excluded,
                                details={"reason": "fewer than three admissible sweep points"})
    consts = vals / bounds
    if np.all(vals == 0):
        fit = SlopeFit(float("-inf"), float("nan"), 1.0)
        passed = True
    else:
        fit = _fit_decay(kept, vals)
        passed = bool(-fit.slope >= 0.75 * target and fit.r_squared >= R2_MIN and _uniform(consts))
    return InequalityReport(name="cancellation-structure", trials=len(kept),
                            worst_ratio=float(consts.max()), fitted_rate=float(-fit.slope),
                            passed=passed, r_squared=fit.r_squared, sweep=kept,
                            constants=list(map(float, consts)), excluded=excluded,
                            details={"beta": beta, "hbar": hbar, "target_rate": target,
                                     "values": vals.tolist()})


# ---------------------------------------------------------------------------
# Gaussian-weighted reduced forms

@dataclass(frozen=True)
class PairMarginals:
    """One- and two-particle densities of an exchangeable state on a periodic grid.

    Either ``rho2`` is given on the pair grid, or ``components`` lists pairs
    ``(weight, density)`` with ``rho2 = sum w_m rho_m (x) rho_m`` (a de Finetti
    mixture).
    """

    grid: GridSpec
    n_particles: int
    rho1: np.ndarray
    rho2: Optional[np.ndarray] = None
    components: tuple = ()

    @classmethod
    def mixture(cls, grid: GridSpec, n_particles: int, weights, densities) -> "PairMarginals":
        w = np.asarray(weights, dtype=float)
        rho1 = sum(wi * d for wi, d in zip(w, densities))
        return cls(grid, n_particles, rho1, None, tuple(zip(map(float, w), densities)))


def _gaussian_multiplier(grid: GridSpec, n_particles: float, eta: float) -> np.ndarray:
    """Fourier multiplier of the periodised ``G_N``: ``exp(-|k|^2 / (4 N^(2 eta)))``."""
    return np.exp(-grid.k_squared / (4.0 * float(n_particles) ** (2 * eta)))


def _conv(mult: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(mult * np.fft.fftn(b)).real


def reduced_form(marg: PairMarginals, rho: np.ndarray, f_weight: np.ndarray, eta: float,
                 mult: Optional[np.ndarray] = None) -> float:
    """``int F(x) G_N(x - y) [((N-1)/N) rho2 - rho1 rho - rho rho1 + rho rho](x, y)``."""
    grid = marg.grid
    n = marg.n_particles
    cell = grid.cell_volume
    mult = _gaussian_multiplier(grid, n, eta) if mult is None else mult
    frac = (n - 1) / n
    if marg.rho2 is not None:
        kern = np.fft.ifftn(mult).real / cell
        d = grid.dim
        fx = f_weight.reshape(grid.shape + (1,) * d)
        pair = cell ** 2 * np.sum(fx * _pair_lookup(kern, grid, 2, 0, 1) * marg.rho2)
    else:
        pair = sum(w * cell * np.sum(f_weight * c * _conv(mult, c)) for w, c in marg.components)
    g_rho = _conv(mult, rho)
    g_rho1 = _conv(mult, marg.rho1)
    rest = cell * np.sum(f_weight * (-marg.rho1 * g_rho - rho * g_rho1 + rho * g_rho))
    return float(frac * pair + rest)


def _trig_eval(samples: np.ndarray, grid: GridSpec, points: np.ndarray,
               mult: Optional[np.ndarray] = None) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``samples`` (optionally filtered) at points."""
    coef = np.fft.fftn(samples) / grid.size
    if mult is not None:
        coef = coef * mult
    keep = np.abs(coef) > 1e-15 * np.abs(coef).max()
    ks = np.stack([k[keep] for k in grid.wavenumbers()], axis=1)
    phase = np.exp(1j * points @ ks.T)
    return (phase @ coef[keep]).real


def empirical_form(points: np.ndarray, rho: np.ndarray, f_weight: np.ndarray, grid: GridSpec,
                   n_particles: int, eta: float) -> float:
    """Per-configuration reduced form with the diagonal removed.

    For ``nu = (1/N) sum delta_{x_i} - rho`` this is
    ``int F(x) G_N(x - y) nu(dx) nu(dy) - (G_N(0)/N^2) sum F(x_i)``; its
    expectation under an exchangeable law is :func:`reduced_form`.
    ``rho`` and ``F`` must be trigonometric polynomials resolved by ``grid``.
    """
    return _empirical_forms(points, rho, [f_weight], grid, n_particles, eta)[0]


def _empirical_forms(points, rho, weights, grid, n, eta) -> List[float]:
    if points.shape != (n, grid.dim):
        raise ConfigurationError("points must have shape (N, dim)")
    mult = _gaussian_multiplier(grid, n, eta)
    diff = points[:, None, :] - points[None, :, :]
    diff -= grid.box_length * np.round(diff / grid.box_length)
    gmat = gaussian_gn(np.sum(diff ** 2, axis=-1), n, eta, grid.dim)
    np.fill_diagonal(gmat, 0.0)
    row = gmat.sum(axis=1)
    g_rho_pts = _trig_eval(rho, grid, points, mult)
    g_rho = _conv(mult, rho)
    out = []
    for f_weight in weights:
        f_pts = _trig_eval(f_weight, grid, points)
        off = float(f_pts @ row) / n ** 2
        cross1 = float(np.sum(f_pts * g_rho_pts)) / n
        cross2 = float(np.sum(_trig_eval(f_weight * rho, grid, points, mult))) / n
        smooth = grid.cell_volume * float(np.sum(f_weight * rho * g_rho))
        out.append(off - cross1 - cross2 + smooth)
    return out


def _smooth_density(rng: np.random.Generator, grid: GridSpec, band: int = 2,
                    amplitude: float = 0.4) -> np.ndarray:
    """Positive trigonometric density of unit mass with random low modes."""
    coords = grid.coords()
    pert = np.zeros(grid.shape)
    for _ in range(4):
        k = rng.integers(-band, band + 1, size=grid.dim)
        if not np.any(k):
            continue
        kk = 2 * np.pi / grid.box_length * k
        pert += rng.uniform(-1, 1) * np.cos(sum(kk[i] * coords[i] for i in range(grid.dim))
                                            + rng.uniform(0, 2 * np.pi))
    scale = np.abs(pert).max()
    if scale > 0:
        pert *= amplitude / scale
    return (1.0 + pert) / grid.volume


def _sample_points(rng: np.random.Generator, dens: np.ndarray, grid: GridSpec, count: int) -> np.ndarray:
    """Rejection sampling from a trigonometric density."""
    top = 1.05 * dens.max()
    out = np.empty((0, grid.dim))
    while out.shape[0] < count:
        cand = rng.uniform(0, grid.box_length, size=(2 * count, grid.dim))
        vals = _trig_eval(dens, grid, cand)
        acc = cand[rng.uniform(0, top, size=2 * count) < vals]
        out = np.concatenate([out, acc])
    return out[:count]


def _mixture_trial(rng: np.random.Generator, grid: GridSpec, n: int, components: int = 3):
    dens = [_smooth_density(rng, grid) for _ in range(components)]
    w = rng.dirichlet(np.ones(components))
    return PairMarginals.mixture(grid, n, w, dens)


def _default_weight(grid: GridSpec) -> np.ndarray:
    """``F = div u`` for a smooth periodic test field ``u``."""
    coords = grid.coords()
    k = 2 * np.pi / grid.box_length
    comps = [0.5 * np.sin(k * coords[(i + 1) % grid.dim]) + 0.3 * np.sin(k * coords[i])
             + 0.2 * np.cos(2 * k * coords[i]) for i in range(grid.dim)]
    return div(VectorField(grid, np.stack(comps))).samples


def verify_reduced_inequality(grid: Optional[GridSpec] = None, rho: Optional[np.ndarray] = None,
                              f_weight: Optional[np.ndarray] = None, eta: float = 0.3,
                              hbar: float = 1.0, n_values: Optional[Sequence[int]] = None,
                              trials: int = 100, samples_per_trial: int = 1, seed: int = 0,
                              marginals: Optional[Sequence[PairMarginals]] = None) -> InequalityReport:
    """``lhs(F) <= ||F||_inf lhs(1) + C (N^-eta hbar^-2 + N^(3 eta - 1))`` with a uniform ``C``.

    Each trial draws a random exchangeable mixture; the inequality is
    checked both for its exact marginals and for ``samples_per_trial``
    configurations ``X_N`` drawn from it.  ``C`` at each ``N`` is the worst
    positive excess divided by the compensator.
    """
    if not 0 < eta < 1.0 / 3.0:
        raise ConfigurationError("eta must lie in (0, 1/3)")
    grid = GridSpec(3, 32, 2 * np.pi) if grid is None else grid
    rho = _smooth_density(np.random.default_rng(seed + 7919), grid) if rho is None else rho
    f_weight = _default_weight(grid) if f_weight is None else f_weight
    ns = [64, 128, 256, 512, 1024] if n_values is None else list(n_values)
    fmax = float(np.abs(f_weight).max())
    ones = np.ones(grid.shape)
    consts = []
    for n in ns:
        comp = n ** -eta * hbar ** -2 + n ** (3 * eta - 1)
        worst = 0.0
        mult = _gaussian_multiplier(grid, n, eta)
        if marginals is not None:
            cases = [m for m in marginals if m.n_particles == n]
            rngs = []
        else:
            rngs = trial_rngs(seed + n, trials)
            cases = [_mixture_trial(r, grid, n) for r in rngs]
        for t, m in enumerate(cases):
            excess = reduced_form(m, rho, f_weight, eta, mult) - fmax * reduced_form(m, rho, ones, eta, mult)
            worst = max(worst, excess / comp)
            if rngs and m.components:
                r = rngs[t]
                for _ in range(samples_per_trial):
                    idx = r.choice(len(m.components), p=[w for w, _ in m.components])
                    pts = _sample_points(r, m.components[idx][1], grid, n)
                    form_f, form_1 = _empirical_forms(pts, rho, [f_weight, ones], grid, n, eta)
                    ex = form_f - fmax * form_1
                    worst = max(worst, ex / comp)
        consts.append(max(worst, 0.0))
    n_ref = 1024
    diag = float(gaussian_gn(0.0, n_ref, 0.3)) / n_ref
    diag_err = abs(diag - n_ref ** (3 * 0.3 - 1) * np.pi ** -1.5) / diag
    passed = bool(_uniform(consts) and diag_err <= 1e-12)
    return InequalityReport(name="reduced-inequality", trials=trials, worst_ratio=float(max(consts)),
                            passed=passed, sweep=list(map(float, ns)), constants=consts,
                            details={"eta": eta, "hbar": hbar, "diagonal_relative_error": diag_err,
                                     "samples_per_trial": samples_per_trial})


def two_body_lower_terms(marg: PairMarginals, rho: np.ndarray, eta: float):
    """``(lhs, square, diagonal)`` of the two-body lower bound.

    ``lhs`` is the Gaussian-weighted pair form, ``square`` the retained term
    ``int G_N (rho1 - rho)(rho1 - rho)`` and ``diagonal`` the analytic
    compensator ``G_N(0)/N``.
    """
    grid = marg.grid
    mult = _gaussian_multiplier(grid, marg.n_particles, eta)
    if marg.rho2 is not None:
        # match the sampled kernel used for the explicit pair sum
        kern = gaussian_gn(grid.centered_radius() ** 2, marg.n_particles, eta, grid.dim)
        mult = np.fft.fftn(kern).real * grid.cell_volume
    ones = np.ones(grid.shape)
    lhs = reduced_form(marg, rho, ones, eta, mult)
    sigma = marg.rho1 - rho
    square = grid.cell_volume * float(np.sum(sigma * _conv(mult, sigma)))
    diag = float(gaussian_gn(0.0, marg.n_particles, eta, grid.dim)) / marg.n_particles
    return lhs, square, diag


def verify_two_body_lower(grid: Optional[GridSpec] = None, rho: Optional[np.ndarray] = None,
                          eta: float = 0.3, n_values: Optional[Sequence[int]] = None,
                          trials: int = 100, seed: int = 0,
                          marginals: Optional[Sequence[PairMarginals]] = None) -> InequalityReport:
    """``pair form >= int G_N (rho1 - rho)(rho1 - rho) - G_N(0)/N`` on every trial.

    The constant reported at each ``N`` is ``max(0, square - lhs) / N^(3 eta - 1)``.
    """
    if not 0 < eta < 1.0 / 3.0:
        raise ConfigurationError("eta must lie in (0, 1/3)")
    if marginals is not None:
        grid = marginals[0].grid
        ns = sorted({m.n_particles for m in marginals})
    else:
        grid = GridSpec(3, 32, 2 * np.pi) if grid is None else grid
        ns = [64, 128, 256, 512, 1024] if n_values is None else list(n_values)
    if rho is None:
        rho = _smooth_density(np.random.default_rng(seed + 7919), grid)
    consts, violations, min_square = [], 0, np.inf
    count = 0
    for n in ns:
        if marginals is not None:
            cases = [m for m in marginals if m.n_particles == n]
        else:
            cases = [_mixture_trial(r, grid, n) for r in trial_rngs(seed + n, trials)]
        worst = 0.0
        for m in cases:
            lhs, square, diag = two_body_lower_terms(m, rho, eta)
            scale = max(abs(lhs), abs(square), diag)
            if lhs < square - diag - 1e-12 * scale:
                violations += 1
            min_square = min(min_square, square)
            worst = max(worst, (square - lhs) / n ** (grid.dim * eta - 1))
            count += 1
        consts.append(max(worst, 0.0))
    passed = bool(violations == 0 and min_square >= -1e-12 and _uniform(consts))
    return InequalityReport(name="two-body-lower", trials=count // max(len(ns), 1),
                            worst_ratio=float(max(consts)), passed=passed,
                            sweep=list(map(float, ns)), constants=consts,
                            details={"violations": violations, "min_square_term": float(min_square),
                                     "eta": eta})
