"""Periodic grids, sampled fields and spectral calculus.

Every other module works on the objects defined here: a :class:`GridSpec`
describing a periodic box, immutable sampled fields living on it, the
interaction profile ``V`` with its scaled versions ``V_N``, and the
collection of couplings :class:`PhysicalParams`.

Conventions
-----------
Grid nodes sit at ``x_j = j * h`` for ``j = 0 .. n-1`` on every axis, with
``h = L / n``.  Spectral coefficients are normalised so that
``f(x) = sum_k c_k exp(i k.x)``, i.e. ``c = fftn(f) / n**dim``.  With this
normalisation Parseval reads ``||f||_2^2 = L**dim * sum |c_k|^2``.

The Coulomb interaction on the torus uses the mean-zero Green's function
(neutralising background).  In dimensions one and two the kernel ``1/|x|``
is replaced by the softened analogue ``1/sqrt(|x|^2 + a^2)``; results that
depend on it carry ``coulomb_analogue = True``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate, special

__all__ = [
    "ConfigurationError",
    "GridSpec",
    "ScalarField",
    "ComplexField",
    "VectorField",
    "VProfile",
    "PhysicalParams",
    "forward_transform",
    "inverse_transform",
    "spectral_norm",
    "sobolev_apply",
    "grad",
    "div",
    "laplacian",
    "dealias_mask",
    "dealias",
    "coulomb_multiplier",
    "coulomb_convolve",
    "softened_kernel",
    "sample_vn",
    "vn_multiplier",
    "check_vn_resolved",
    "coulomb_softening",
    "coulomb_kernel_samples",
    "RESOLUTION_FACTOR",
]

#: Minimum number of grid spacings per correlation length ``N**(-beta)``.
RESOLUTION_FACTOR = 4.0

_SPHERE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}


class ConfigurationError(ValueError):
    """Raised when inputs are inconsistent or a scale cannot be resolved."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the box ``[0, L)^dim``.

    Parameters
    ----------
    dim : int
        Spatial dimension, one of 1, 2, 3.
    points_per_axis : int
        Samples per axis; must be a power of two.
    box_length : float
        Period ``L`` of every axis.
    """

    dim: int
    points_per_axis: int
    box_length: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not _is_power_of_two(int(self.points_per_axis)):
            raise ConfigurationError(
                f"points_per_axis must be a power of two, got {self.points_per_axis}"
            )
        if not self.box_length > 0:
            raise ConfigurationError(f"box_length must be positive, got {self.box_length}")

    @property
    def h(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def volume(self) -> float:
        return self.box_length ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.points_per_axis) * self.h

    def coords(self) -> tuple:
        """Node coordinates, one array of ``shape`` per axis."""
        return tuple(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def centered_axis(self) -> np.ndarray:
        """Minimum-image coordinate of every node along one axis."""
        n = self.points_per_axis
        j = np.arange(n)
        j = np.where(j < n // 2, j, j - n)
        return j * self.h

    def centered_coords(self) -> tuple:
        return tuple(np.meshgrid(*([self.centered_axis()] * self.dim), indexing="ij"))

    def centered_radius(self) -> np.ndarray:
        """Minimum-image distance of every node to the origin."""
        return np.sqrt(sum(c * c for c in self.centered_coords()))

    def wavenumber_axis(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.h)

    def wavenumbers(self) -> tuple:
        return tuple(np.meshgrid(*([self.wavenumber_axis()] * self.dim), indexing="ij"))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers())

    @property
    def k_max(self) -> float:
        return np.pi / self.h

    def check_samples(self, samples: np.ndarray, vector: bool = False) -> None:
        expected = ((self.dim,) if vector else ()) + self.shape
        if samples.shape != expected:
            raise ConfigurationError(
                f"samples of shape {samples.shape} do not match grid shape {expected}"
            )


def _lp(samples: np.ndarray, grid: GridSpec, p: float) -> float:
    a = np.abs(samples)
    if np.isinf(p):
        return float(a.max())
    return float((grid.cell_volume * np.sum(a ** p)) ** (1.0 / p))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples on a grid."""

    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        self.grid.check_samples(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def norm(self, p: float = 2.0) -> float:
        return _lp(self.samples, self.grid, p)

    def integral(self) -> float:
        return float(self.grid.cell_volume * self.samples.sum())

    def mean(self) -> float:
        return float(self.samples.mean())

    def __add__(self, other):
        return ScalarField(self.grid, self.samples + _raw(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.samples - _raw(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.samples * _raw(other))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex samples on a grid."""

    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=complex)
        self.grid.check_samples(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def norm(self, p: float = 2.0) -> float:
        return _lp(self.samples, self.grid, p)

    def integral(self) -> complex:
        return complex(self.grid.cell_volume * self.samples.sum())


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` real components stacked along the leading axis."""

    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        self.grid.check_samples(arr, vector=True)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.samples[i])

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.samples ** 2, axis=0)))

    def norm(self, p: float = 2.0) -> float:
        return self.magnitude().norm(p)


def _raw(x):
    if isinstance(x, (ScalarField, ComplexField, VectorField)):
        return x.samples
    return x


def _samples_and_grid(f, grid: Optional[GridSpec] = None):
    if isinstance(f, (ScalarField, ComplexField, VectorField)):
        return f.samples, f.grid
    if grid is None:
        raise ConfigurationError("a GridSpec is required for raw arrays")
    arr = np.asarray(f)
    grid.check_samples(arr)
    return arr, grid


# ---------------------------------------------------------------------------
# transforms


def forward_transform(f, grid: Optional[GridSpec] = None) -> np.ndarray:
    """Spectral coefficients ``c_k`` with ``f = sum_k c_k exp(i k.x)``."""
    samples, grid = _samples_and_grid(f, grid)
    return np.fft.fftn(samples) / grid.size


def inverse_transform(coeffs: np.ndarray, grid: GridSpec) -> ComplexField:
    """Exact inverse of :func:`forward_transform`."""
    coeffs = np.asarray(coeffs)
    grid.check_samples(coeffs)
    return ComplexField(grid, np.fft.ifftn(coeffs) * grid.size)


def spectral_norm(coeffs: np.ndarray, grid: GridSpec) -> float:
    """L2 norm computed from spectral coefficients (Parseval)."""
    return float(np.sqrt(grid.volume * np.sum(np.abs(coeffs) ** 2)))


def _wrap_like(template, samples: np.ndarray, grid: GridSpec):
    if isinstance(template, ScalarField) or (
        not isinstance(template, ComplexField) and np.isrealobj(template)
    ):
        return ScalarField(grid, samples.real)
    return ComplexField(grid, samples)


def sobolev_apply(f, s: float, grid: Optional[GridSpec] = None):
    """Apply the Bessel multiplier ``(1 + |k|^2)^(s/2)``.

    Parameters
    ----------
    f : ScalarField, ComplexField or ndarray
        Field to transform.
    s : float
        Sobolev order, ``s >= 0``.
    """
    if s < 0:
        raise ConfigurationError("sobolev order must be nonnegative")
    samples, grid = _samples_and_grid(f, grid)
    if s == 0:
        return _wrap_like(f, np.array(samples), grid)
    mult = (1.0 + grid.k_squared) ** (0.5 * s)
    out = np.fft.ifftn(mult * np.fft.fftn(samples))
    return _wrap_like(f, out, grid)


def grad(f, grid: Optional[GridSpec] = None) -> VectorField:
    """Spectral gradient of a real scalar field."""
    samples, grid = _samples_and_grid(f, grid)
    fh = np.fft.fftn(samples)
    comps = [np.fft.ifftn(1j * k * fh).real for k in grid.wavenumbers()]
    return VectorField(grid, np.stack(comps))


def div(v, grid: Optional[GridSpec] = None) -> ScalarField:
    """Spectral divergence of a vector field."""
    if isinstance(v, VectorField):
        samples, grid = v.samples, v.grid
    else:
        samples = np.asarray(v)
        grid.check_samples(samples, vector=True)
    acc = np.zeros(grid.shape, dtype=complex)
    for i, k in enumerate(grid.wavenumbers()):
        acc += 1j * k * np.fft.fftn(samples[i])
    return ScalarField(grid, np.fft.ifftn(acc).real)


def laplacian(f, grid: Optional[GridSpec] = None):
    samples, grid = _samples_and_grid(f, grid)
    out = np.fft.ifftn(-grid.k_squared * np.fft.fftn(samples))
    return _wrap_like(f, out, grid)


def dealias_mask(grid: GridSpec) -> np.ndarray:
    """Boolean mask keeping modes with ``|k_i| < (2/3) k_max`` on every axis."""
    cut = (2.0 / 3.0) * grid.k_max
    mask = np.ones(grid.shape, dtype=bool)
    for k in grid.wavenumbers():
        mask &= np.abs(k) < cut
    return mask


def dealias(f, grid: Optional[GridSpec] = None):
    samples, grid = _samples_and_grid(f, grid)
    out = np.fft.ifftn(dealias_mask(grid) * np.fft.fftn(samples))
    return _wrap_like(f, out, grid)


# ---------------------------------------------------------------------------
# Coulomb


def softened_kernel(grid: GridSpec, softening: float) -> np.ndarray:
    """Minimum-image samples of ``1/sqrt(|x|^2 + a^2)``."""
    r2 = grid.centered_radius() ** 2
    return 1.0 / np.sqrt(r2 + softening ** 2)


def default_softening(grid: GridSpec) -> float:
    return RESOLUTION_FACTOR * grid.h


def coulomb_multiplier(grid: GridSpec, softening: Optional[float] = None) -> np.ndarray:
    """Fourier multiplier ``K_hat(k)`` of the periodic Coulomb kernel.

    In three dimensions this is ``4 pi / |k|^2``.  In one and two dimensions it
    is the discrete transform of the sampled softened kernel.  The zero mode is
    set to zero in all cases.
    """
    if grid.dim == 3 and softening is None:
        k2 = grid.k_squared.copy()
        k2[(0,) * 3] = 1.0
        mult = 4.0 * np.pi / k2
    else:
        a = default_softening(grid) if softening is None else float(softening)
        if a <= 0:
            raise ConfigurationError("softening length must be positive")
        mult = np.fft.fftn(softened_kernel(grid, a)).real * grid.cell_volume
    mult[(0,) * grid.dim] = 0.0
    return mult


def coulomb_convolve(rho, softening: Optional[float] = None,
                     grid: Optional[GridSpec] = None) -> ScalarField:
    """Mean-zero periodic convolution ``V_c * rho``.

    Parameters
    ----------
    rho : ScalarField
        Real density.
    softening : float, optional
        Softening length ``a``.  Ignored in dimension three unless given
        explicitly.  Defaults to ``4 h`` in toy dimensions.
    """
    samples, grid = _samples_and_grid(rho, grid)
    mult = coulomb_multiplier(grid, softening)
    out = np.fft.ifftn(mult * np.fft.fftn(samples)).real
    return ScalarField(grid, out)


# ---------------------------------------------------------------------------
# interaction profile

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(400)


def _bump(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


def _bump_prime(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    tm = t[m]
    out[m] = np.exp(-1.0 / (1.0 - tm ** 2)) * (-2.0 * tm / (1.0 - tm ** 2) ** 2)
    return out


@dataclass(frozen=True)
class VProfile:
    """Radial smooth bump ``V(x) = A exp(-1 / (1 - |x|^2 / R^2))``.

    The profile is smooth, compactly supported in the ball of radius ``R``,
    spherically symmetric and nonnegative.

    Parameters
    ----------
    radius : float
        Support radius ``R``.  The default of 6 keeps the lattice quadrature
        of ``V_N`` within 1e-6 of ``b0`` whenever ``N**(-beta) >= 4 h``.
    amplitude : float
        Peak prefactor ``A``; zero gives the non-interacting case.
    """

    radius: float = 6.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("profile radius must be positive")
        if self.amplitude < 0:
            raise ConfigurationError("profile amplitude must be nonnegative")

    @classmethod
    def normalized(cls, b0: float = 1.0, dim: int = 3, radius: float = 6.0) -> "VProfile":
        """Profile whose integral over ``R^dim`` equals ``b0``."""
        unit = cls(radius, 1.0)
        return cls(radius, b0 / unit.integral(dim))

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def value(self, r) -> np.ndarray:
        return self.amplitude * _bump(np.asarray(r, dtype=float) / self.radius)

    def derivative(self, r) -> np.ndarray:
        """Radial derivative ``V'(r)``."""
        return self.amplitude / self.radius * _bump_prime(np.asarray(r, dtype=float) / self.radius)

    def _radial_nodes(self):
        r = 0.5 * self.radius * (_GL_NODES + 1.0)
        w = 0.5 * self.radius * _GL_WEIGHTS
        return r, w

    def integral(self, dim: int = 3) -> float:
        """``int_{R^dim} V dx`` by Gauss-Legendre in the radius."""
        r, w = self._radial_nodes()
        return float(_SPHERE_AREA[dim] * np.sum(w * self.value(r) * r ** (dim - 1)))

    def integral_adaptive(self, dim: int = 3) -> float:
        """Independent adaptive quadrature of ``int V``, used as a cross-check."""
        val, _ = integrate.quad(
            lambda r: float(self.value(r)) * r ** (dim - 1), 0.0, self.radius,
            epsabs=0.0, epsrel=1e-13, limit=400,
        )
        return _SPHERE_AREA[dim] * val

    def lp_norm(self, p: float, dim: int = 3) -> float:
        if np.isinf(p):
            return float(self.amplitude * np.exp(-1.0))
        r, w = self._radial_nodes()
        return float((_SPHERE_AREA[dim] * np.sum(w * self.value(r) ** p * r ** (dim - 1))) ** (1.0 / p))

    def moment(self, power: float, dim: int = 3) -> float:
        """``int V(x) |x|^power dx``."""
        r, w = self._radial_nodes()
        return float(_SPHERE_AREA[dim] * np.sum(w * self.value(r) * r ** (dim - 1 + power)))

    def fourier(self, q, dim: int = 3) -> np.ndarray:
        """``V_hat(q) = int V(x) exp(-i q.x) dx`` for radial ``|q|``."""
        q = np.asarray(q, dtype=float)
        flat = np.abs(q.ravel())
        r, w = self._radial_nodes()
        vals = w * self.value(r) * r ** (dim - 1)
        out = np.empty_like(flat)
        step = 4096
        for s in range(0, flat.size, step):
            qr = np.outer(flat[s:s + step], r)
            if dim == 1:
                kern = np.cos(qr)
            elif dim == 2:
                kern = special.j0(qr)
            else:
                kern = np.sinc(qr / np.pi)
            out[s:s + step] = _SPHERE_AREA[dim] * kern @ vals
        return out.reshape(q.shape)


@dataclass(frozen=True)
class PhysicalParams:
    """Couplings of the N-body Hamiltonian and of the limit equations.

    Parameters
    ----------
    n_particles : int
        Particle number ``N >= 2``.
    hbar : float
        Semiclassical parameter.
    beta : float
        Interaction scaling exponent in ``(0, 1)``.
    kappa : float
        Coulomb coupling, ``>= 0``.
    eta : float
        Mollifier exponent in ``(0, 1/3)``.
    v_profile : VProfile
        Unscaled interaction ``V``.
    b0 : float, optional
        ``int V``.  Computed from the profile when omitted; when supplied it
        must agree with the quadrature to 1e-10 relative.
    dim : int
        Spatial dimension of the computation (3 is the physical case).
    softening : float, optional
        Softening length of the toy-dimension Coulomb kernel.
    """

    n_particles: int
    hbar: float
    beta: float
    kappa: float = 0.0
    eta: float = 0.3
    v_profile: VProfile = field(default_factory=VProfile.normalized)
    b0: Optional[float] = None
    dim: int = 3
    softening: Optional[float] = None

    def __post_init__(self):
        errors = []
        if int(self.n_particles) != self.n_particles or self.n_particles < 2:
            errors.append(f"n_particles must be an integer >= 2, got {self.n_particles}")
        if not self.hbar > 0:
            errors.append(f"hbar must be positive, got {self.hbar}")
        if not 0.0 < self.beta < 1.0:
            errors.append(f"beta must lie in (0, 1), got {self.beta}")
        if self.kappa < 0:
            errors.append(f"kappa must be nonnegative, got {self.kappa}")
        if not 0.0 < self.eta < 1.0 / 3.0:
            errors.append(f"eta must lie in (0, 1/3), got {self.eta}")
        if self.dim not in (1, 2, 3):
            errors.append(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.softening is not None and not self.softening > 0:
            errors.append("softening must be positive")
        if errors:
            raise ConfigurationError("; ".join(errors))
        computed = self.v_profile.integral(self.dim)
        if self.b0 is None:
            object.__setattr__(self, "b0", computed)
        elif abs(self.b0 - computed) > 1e-10 * max(abs(computed), 1e-300):
            raise ConfigurationError(
                f"b0={self.b0} disagrees with the profile integral {computed}"
            )
        if not self.v_profile.is_zero and not self.b0 > 0:
            raise ConfigurationError("b0 must be positive for a nonzero profile")

    @property
    def correlation_length(self) -> float:
        """``N**(-beta)``, the range scale of ``V_N``."""
        return float(self.n_particles) ** (-self.beta)

    @property
    def vn_support(self) -> float:
        return self.v_profile.radius * self.correlation_length

    @property
    def coulomb_analogue(self) -> bool:
        return self.dim != 3

    def vn_value(self, r) -> np.ndarray:
        """``V_N(r) = N^(dim beta) V(N^beta r)``."""
        n_b = float(self.n_particles) ** self.beta
        return n_b ** self.dim * self.v_profile.value(np.asarray(r) * n_b)

    def vn_derivative(self, r) -> np.ndarray:
        n_b = float(self.n_particles) ** self.beta
        return n_b ** (self.dim + 1) * self.v_profile.derivative(np.asarray(r) * n_b)

    def vn_fourier(self, q) -> np.ndarray:
        """``V_N_hat(q) = V_hat(q / N^beta)``."""
        n_b = float(self.n_particles) ** self.beta
        return self.v_profile.fourier(np.asarray(q) / n_b, self.dim)

    def replace(self, **changes) -> "PhysicalParams":
        data = {
            "n_particles": self.n_particles, "hbar": self.hbar, "beta": self.beta,
            "kappa": self.kappa, "eta": self.eta, "v_profile": self.v_profile,
            "dim": self.dim, "softening": self.softening,
        }
        data.update(changes)
        return PhysicalParams(**data)


def check_vn_resolved(params: PhysicalParams, grid: GridSpec) -> None:
    """Raise unless ``N**(-beta) >= 4 h`` and ``supp V_N`` fits in half the box."""
    if params.v_profile.is_zero:
        return
    ell = params.correlation_length
    if ell < RESOLUTION_FACTOR * grid.h * (1.0 - 1e-12):
        raise ConfigurationError(
            f"V_N unresolved: N^-beta={ell:.4g} < {RESOLUTION_FACTOR:g} h = "
            f"{RESOLUTION_FACTOR * grid.h:.4g}"
        )
    if params.vn_support >= 0.5 * grid.box_length:
        raise ConfigurationError(
            f"support of V_N ({params.vn_support:.4g}) does not fit in half the box"
        )


def coulomb_softening(params: PhysicalParams, grid: GridSpec) -> Optional[float]:
    """Softening length used with ``params`` on ``grid``.

    ``None`` (the exact ``4 pi / |k|^2`` multiplier) in dimension three unless
    set explicitly; ``params.softening`` or ``4 h`` in toy dimensions.
    """
    if grid.dim == 3:
        return params.softening
    return params.softening if params.softening is not None else default_softening(grid)


def coulomb_kernel_samples(params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """Real-space samples ``K(x_m)`` of the periodic mean-zero Coulomb kernel.

    Normalised so that ``h**d * sum_m K(x - x_m) rho(x_m)`` reproduces
    :func:`coulomb_convolve` exactly.
    """
    mult = coulomb_multiplier(grid, coulomb_softening(params, grid))
    return np.fft.ifftn(mult).real / grid.cell_volume


def sample_vn(params: PhysicalParams, grid: GridSpec, check: bool = True) -> ScalarField:
    """Minimum-image samples of ``V_N`` centred at the origin."""
    if grid.dim != params.dim:
        raise ConfigurationError("grid and params dimensions differ")
    if check:
        check_vn_resolved(params, grid)
    return ScalarField(grid, params.vn_value(grid.centered_radius()))


def vn_multiplier(params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """Continuous Fourier transform of ``V_N`` on the grid wavenumbers."""
    return params.vn_fourier(np.sqrt(grid.k_squared))
