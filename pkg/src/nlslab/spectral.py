"""Grids, trigonometric transforms and the exact linear propagator.

Dirichlet rectangles store the interior nodes x_j = j L/(n+1), j = 1..n, and
expand in sin(π k x / L), k = 1..n, through the orthonormal DST-I.  The flat
torus stores x_j = j L/n and uses the orthonormal FFT.  In both cases the
transform is unitary on the nodal values, so the rectangle-rule L² norm
equals the coefficient sum times the cell volume exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft as sfft

__all__ = [
    "DIRICHLET",
    "PERIODIC",
    "DomainSpec",
    "Field",
    "SpectralCoefficients",
    "transform",
    "inverse_transform",
    "propagate",
    "laplacian",
    "gradient",
    "partial_derivative",
    "gradient_norm_sq",
    "norms",
    "l2_norm",
    "h2_norm",
    "tail_fraction",
]

DIRICHLET = "dirichlet_rectangle"
PERIODIC = "periodic_torus"


def _largest_prime_factor(n: int) -> int:
    largest, f = 1, 2
    while f * f <= n:
        while n % f == 0:
            largest, n = f, n // f
        f += 1
    return max(largest, n) if n > 1 else largest


@dataclass(frozen=True)
class DomainSpec:
    dimension: int
    side_lengths: tuple[float, ...]
    grid_points: tuple[int, ...]
    kind: str = DIRICHLET

    def __post_init__(self):
        object.__setattr__(self, "side_lengths", tuple(float(x) for x in self.side_lengths))
        object.__setattr__(self, "grid_points", tuple(int(n) for n in self.grid_points))
        d = self.dimension
        if d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
        if self.kind not in (DIRICHLET, PERIODIC):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if len(self.side_lengths) != d or len(self.grid_points) != d:
            raise ValueError("side_lengths and grid_points need one entry per dimension")
        if any(not math.isfinite(L) or L <= 0 for L in self.side_lengths):
            raise ValueError("side lengths must be positive")
        for n in self.grid_points:
            if n < 8:
                raise ValueError(f"need at least 8 grid points per axis, got {n}")
            size = n + 1 if self.kind == DIRICHLET else n
            if _largest_prime_factor(size) > 7:
                raise ValueError(
                    f"transform size {size} has a prime factor above 7; "
                    "pick n so that n+1 (Dirichlet) or n (torus) is 7-smooth"
                )

    @classmethod
    def square(cls, dimension: int, length: float, n: int, kind: str = DIRICHLET) -> "DomainSpec":
        return cls(dimension, (length,) * dimension, (n,) * dimension, kind)

    @property
    def periodic(self) -> bool:
        return self.kind == PERIODIC

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid_points

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.periodic:
            return tuple(L / n for L, n in zip(self.side_lengths, self.grid_points))
        return tuple(L / (n + 1) for L, n in zip(self.side_lengths, self.grid_points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    def axes(self) -> list[np.ndarray]:
        if self.periodic:
            return [np.arange(n) * h for n, h in zip(self.grid_points, self.spacing)]
        return [np.arange(1, n + 1) * h for n, h in zip(self.grid_points, self.spacing)]

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays (sparse meshgrid)."""
        grids = np.meshgrid(*self.axes(), indexing="ij", sparse=True)
        for g in grids:
            g.flags.writeable = False
        return tuple(grids)

    def wavenumbers(self) -> list[np.ndarray]:
        """Per-axis angular wavenumbers of the basis modes."""
        if self.periodic:
            return [2 * np.pi * np.fft.fftfreq(n, d=L / n) for n, L in zip(self.grid_points, self.side_lengths)]
        return [np.pi * np.arange(1, n + 1) / L for n, L in zip(self.grid_points, self.side_lengths)]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """μ_j with -Δ e_j = μ_j e_j on the mode grid."""
        ks = np.meshgrid(*self.wavenumbers(), indexing="ij", sparse=True)
        mu = sum(k**2 for k in ks)
        mu = np.broadcast_to(mu, self.shape).copy()
        mu.flags.writeable = False
        return mu

    def distance_to_boundary(self, point) -> float:
        if self.periodic:
            return math.inf
        return min(min(x, L - x) for x, L in zip(point, self.side_lengths))

    def contains(self, point) -> bool:
        if len(point) != self.dimension:
            return False
        return all(0.0 < x < L for x, L in zip(point, self.side_lengths))

    def displacement(self, point) -> tuple[np.ndarray, ...]:
        """x - point on the grid, minimum image on the torus."""
        out = []
        for x, c, L in zip(self.coordinates, point, self.side_lengths):
            z = x - c
            if self.periodic:
                z = z - L * np.round(z / L)
            out.append(z)
        return tuple(out)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "kind": self.kind,
            "side_lengths": list(self.side_lengths),
            "grid_points": list(self.grid_points),
        }

    @classmethod
    def from_json(cls, data: dict) -> "DomainSpec":
        return cls(
            int(data["dimension"]),
            tuple(data["side_lengths"]),
            tuple(data["grid_points"]),
            data.get("kind", DIRICHLET),
        )


@dataclass(frozen=True, eq=False)
class Field:
    """Complex grid function; Dirichlet fields hold interior values only."""

    domain: DomainSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != self.domain.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.domain.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values, time: float | None = None) -> "Field":
        return Field(self.domain, values, self.time if time is None else time)

    def __add__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c) -> "Field":
        return self.with_values(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralCoefficients:
    domain: DomainSpec
    coefficients: np.ndarray
    time: float = field(default=0.0)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != self.domain.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.domain.shape}")
        object.__setattr__(self, "coefficients", c)


def _check_same(a: Field, b: Field) -> None:
    if a.domain != b.domain:
        raise ValueError("fields live on different domains")


# array-level kernels; the hot loops call these directly


def forward(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    if values.shape != domain.shape:
        raise ValueError(f"array shape {values.shape} does not match grid {domain.shape}")
    if domain.periodic:
        return sfft.fftn(values, norm="ortho")
    return sfft.dstn(values, type=1, norm="ortho")


def backward(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    if coeffs.shape != domain.shape:
        raise ValueError(f"array shape {coeffs.shape} does not match grid {domain.shape}")
    if domain.periodic:
        return sfft.ifftn(coeffs, norm="ortho")
    return sfft.idstn(coeffs, type=1, norm="ortho")


def propagator_phase(domain: DomainSpec, dt: float) -> np.ndarray:
    """Multiplier of e^{i dt Δ} in the mode basis."""
    return np.exp(-1j * dt * domain.eigenvalues)


def propagate_array(values: np.ndarray, domain: DomainSpec, dt: float) -> np.ndarray:
    if dt == 0:
        return np.array(values, dtype=complex)
    return backward(forward(values, domain) * propagator_phase(domain, dt), domain)


def laplacian_array(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return backward(-domain.eigenvalues * forward(values, domain), domain)


def derivative_array(values: np.ndarray, domain: DomainSpec, axis: int) -> np.ndarray:
    """Spectral ∂/∂x_axis.

    On the rectangle the derivative of a sine series is a cosine series, which
    the odd extension along ``axis`` handles exactly; the other axes are left
    untouched so mixed derivatives compose correctly.
    """
    n = domain.grid_points[axis]
    L = domain.side_lengths[axis]
    values = np.asarray(values, dtype=complex)
    if domain.periodic:
        k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
        if n % 2 == 0:
            k[n // 2] = 0.0
        shape = [1] * values.ndim
        shape[axis] = n
        return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)
    v = np.moveaxis(values, axis, -1)
    zero = np.zeros(v.shape[:-1] + (1,), dtype=complex)
    ext = np.concatenate([zero, v, zero, -v[..., ::-1]], axis=-1)
    m = 2 * (n + 1)
    k = 2 * np.pi * np.fft.fftfreq(m, d=L / (n + 1))
    k[m // 2] = 0.0
    der = np.fft.ifft(1j * k * np.fft.fft(ext, axis=-1), axis=-1)[..., 1 : n + 1]
    return np.moveaxis(der, -1, axis)


def second_derivative_array(values: np.ndarray, domain: DomainSpec, axis: int) -> np.ndarray:
    """Spectral ∂²/∂x_axis², diagonal in the mode basis."""
    k = domain.wavenumbers()[axis]
    shape = [1] * domain.dimension
    shape[axis] = -1
    return backward(-(k.reshape(shape) ** 2) * forward(values, domain), domain)


def _scaled_norm(a: np.ndarray) -> float:
    """Euclidean norm that neither underflows nor overflows in the squares."""
    a = np.abs(a)
    top = a.max(initial=0.0)
    if top == 0 or not np.isfinite(top):
        return float(top)
    return float(top * np.sqrt(np.sum((a / top) ** 2)))


def l2_norm_array(values: np.ndarray, domain: DomainSpec) -> float:
    return math.sqrt(domain.cell_volume) * _scaled_norm(values)


def _spectral_energy(values, domain, power):
    c = forward(values, domain)
    return float(domain.cell_volume * np.sum(domain.eigenvalues**power * np.abs(c) ** 2))


def h2_norm_array(values: np.ndarray, domain: DomainSpec) -> float:
    """‖f‖_{L²} + ‖∇²f‖_{L²}; for sine and Fourier series ‖∇²f‖ = ‖Δf‖."""
    c = forward(values, domain)
    w = math.sqrt(domain.cell_volume)
    return w * (_scaled_norm(c) + _scaled_norm(domain.eigenvalues * c))


@lru_cache(maxsize=32)
def _high_mode_mask(domain: DomainSpec, cut: float) -> np.ndarray:
    mask = np.zeros(domain.shape, dtype=bool)
    for axis, n in enumerate(domain.grid_points):
        if domain.periodic:
            idx = np.abs(np.fft.fftfreq(n) * n) / (n / 2)
        else:
            idx = np.arange(1, n + 1) / n
        shape = [1] * domain.dimension
        shape[axis] = n
        mask = mask | (idx.reshape(shape) > cut)
    mask.flags.writeable = False
    return mask


def tail_fraction_from_power(power: np.ndarray, domain: DomainSpec, cut: float = 2.0 / 3.0) -> float:
    """Tail fraction given |coefficients|²."""
    total = float(power.sum())
    if total == 0:
        return 0.0
    return float(power[_high_mode_mask(domain, cut)].sum() / total)


def tail_fraction_array(values: np.ndarray, domain: DomainSpec, cut: float = 2.0 / 3.0) -> float:
    """Share of spectral energy in modes beyond ``cut`` of the resolvable band."""
    return tail_fraction_from_power(np.abs(forward(values, domain)) ** 2, domain, cut)


# Field-level API


def transform(f: Field) -> SpectralCoefficients:
    return SpectralCoefficients(f.domain, forward(f.values, f.domain), f.time)


def inverse_transform(c: SpectralCoefficients) -> Field:
    return Field(c.domain, backward(c.coefficients, c.domain), c.time)


def propagate(f: Field, dt: float) -> Field:
    """Apply the free Schrödinger group e^{i dt Δ}; ``dt`` may be negative."""
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    return Field(f.domain, propagate_array(f.values, f.domain, dt), f.time + dt)


def laplacian(f: Field) -> Field:
    return f.with_values(laplacian_array(f.values, f.domain))


def partial_derivative(f: Field, axis: int) -> Field:
    return f.with_values(derivative_array(f.values, f.domain, axis))


def gradient(f: Field) -> list[Field]:
    return [partial_derivative(f, a) for a in range(f.domain.dimension)]


def gradient_norm_sq(f: Field) -> float:
    return _spectral_energy(f.values, f.domain, 1)


def l2_norm(f: Field) -> float:
    return l2_norm_array(f.values, f.domain)


def h2_norm(f: Field) -> float:
    return h2_norm_array(f.values, f.domain)


def tail_fraction(f: Field) -> float:
    return tail_fraction_array(f.values, f.domain)


def norms(f: Field) -> dict[str, float]:
    c = forward(f.values, f.domain)
    w = f.domain.cell_volume
    mu = f.domain.eigenvalues
    a2 = np.abs(c) ** 2
    l2 = float(np.sqrt(w * a2.sum()))
    grad2 = float(w * np.sum(mu * a2))
    hess = float(np.sqrt(w * np.sum(mu**2 * a2)))
    return {
        "l2": l2,
        "h1": float(np.sqrt(l2**2 + grad2)),
        "h2": l2 + hess,
        "linf": float(np.max(np.abs(f.values))) if f.values.size else 0.0,
    }
