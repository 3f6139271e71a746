"""Mean-zero Fourier fields on the circle (0, 2*pi].

A field is stored by its complex coefficients c_k for k = 1..K and
represents

    g(x) = 2 * sum_{k=1}^{K} Re(c_k exp(i k x)),

so the k = 0 mode is absent by construction. Inner products use the
physical normalisation <f, g> = int_0^{2 pi} f g dx = 4 pi sum Re(f_k conj(g_k)).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Grid",
    "SpectralField",
    "field_from_modes",
    "zeros",
    "derivative",
    "project_low",
    "project_high",
    "l2_inner",
    "sobolev_norm",
    "nonlinear_term",
    "nonlinear_coeffs",
    "quadrature",
    "GridMismatchError",
]


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


def _min_points(K: int) -> int:
    # quadratic products carry modes up to 2K; alias-free on 1..K needs n > 3K
    return 3 * K + 1


def default_points(K: int) -> int:
    """Smallest power of two that dealiases a quadratic product of K modes."""
    n = 2
    while n < _min_points(K):
        n *= 2
    return n


@dataclass(frozen=True)
class Grid:
    """Truncation level ``K`` and physical resolution ``n`` used for products.

    ``n`` defaults to the smallest power of two with ``n >= 3K + 1``, which
    is the two-thirds rule for the quadratic nonlinearity.
    """

    K: int
    n: int = 0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"max mode K must be a positive integer, got {self.K!r}")
        n = self.n or default_points(self.K)
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "n", int(n))
        if self.n % 2:
            raise ValueError(f"phys_points n must be even, got {self.n}")
        if self.n < _min_points(self.K):
            raise ValueError(
                f"n={self.n} aliases the quadratic term for K={self.K}; need n >= {_min_points(self.K)}"
            )

    @property
    def wavenumbers(self) -> np.ndarray:
        return _wavenumbers(self.K)

    @property
    def x(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n


@lru_cache(maxsize=None)
def _wavenumbers(K: int) -> np.ndarray:
    k = np.arange(1, K + 1, dtype=float)
    k.setflags(write=False)
    return k


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable real mean-zero field on ``grid``."""

    grid: Grid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (self.grid.K,):
            raise ValueError(f"expected {self.grid.K} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_physical(cls, grid: Grid, values) -> "SpectralField":
        """Project samples on ``grid.x`` (or any even-length uniform grid) onto modes 1..K."""
        values = np.asarray(values, dtype=float)
        m = values.shape[-1]
        spec = np.fft.rfft(values) / m
        c = np.zeros(grid.K, dtype=complex)
        top = min(grid.K, m // 2 - 1)
        c[:top] = spec[1 : top + 1]
        return cls(grid, c)

    def to_physical(self, n: int | None = None) -> np.ndarray:
        return _to_physical(self.coeffs, n or self.grid.n)

    def coeff(self, k: int) -> complex:
        return complex(self.coeffs[k - 1])

    def modes(self) -> list[tuple[int, complex]]:
        """Nonzero (k, c_k) pairs, the inverse of :func:`field_from_modes`."""
        return [(k + 1, complex(c)) for k, c in enumerate(self.coeffs) if c != 0]

    def _check(self, other: "SpectralField"):
        if self.grid != other.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None


def _to_physical(coeffs: np.ndarray, n: int) -> np.ndarray:
    K = coeffs.shape[-1]
    if n < 2 * K + 2:
        raise ValueError(f"{n} points cannot represent {K} modes")
    X = np.zeros(coeffs.shape[:-1] + (n // 2 + 1,), dtype=complex)
    X[..., 1 : K + 1] = coeffs * n
    return np.fft.irfft(X, n)


def zeros(grid: Grid) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.K, dtype=complex))


def field_from_modes(grid: Grid, entries) -> SpectralField:
    """Build a field from ``(k, c_k)`` pairs; unspecified modes are zero."""
    c = np.zeros(grid.K, dtype=complex)
    seen = set()
    for k, value in entries:
        if int(k) != k or not 1 <= k <= grid.K:
            raise IndexError(f"mode {k} outside 1..{grid.K}")
        if k in seen:
            raise ValueError(f"duplicate mode {k}")
        seen.add(k)
        c[int(k) - 1] = value
    return SpectralField(grid, c)


def derivative(f: SpectralField, m: int = 1) -> SpectralField:
    """``D^m f``: multiply mode k by ``(ik)^m``."""
    if m < 0:
        raise ValueError("derivative order must be nonnegative")
    if m == 0:
        return f
    return SpectralField(f.grid, f.coeffs * (1j * f.grid.wavenumbers) ** m)


def project_low(f: SpectralField, N: int) -> SpectralField:
    """Keep modes ``k <= N`` (the operator ``P_N``)."""
    c = f.coeffs.copy()
    c[max(int(N), 0) :] = 0
    return SpectralField(f.grid, c)


def project_high(f: SpectralField, N: int) -> SpectralField:
    """Complementary projection ``Q_N = I - P_N``."""
    c = f.coeffs.copy()
    c[: max(int(N), 0)] = 0
    return SpectralField(f.grid, c)


def l2_inner(f: SpectralField, g: SpectralField) -> float:
    f._check(g)
    return float(4 * np.pi * np.sum((f.coeffs * np.conj(g.coeffs)).real))


def sobolev_norm(f: SpectralField, m: int = 0) -> float:
    """Homogeneous norm ``||D^m f||_{L^2}``."""
    w = np.abs(f.coeffs) ** 2
    if m:
        w = w * f.grid.wavenumbers ** (2 * m)
    return float(np.sqrt(4 * np.pi * np.sum(w)))


def nonlinear_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased coefficients of ``u Du`` for a batch of coefficient rows."""
    n = grid.n
    k = grid.wavenumbers
    u = _to_physical(coeffs, n)
    ux = _to_physical(1j * k * coeffs, n)
    return np.fft.rfft(u * ux)[..., 1 : grid.K + 1] / n


def nonlinear_term(u: SpectralField) -> SpectralField:
    """Spectral representation of ``u Du`` truncated to modes 1..K.

    Products are formed on ``grid.n >= 3K + 1`` points, so the result equals
    the exact convolution sum restricted to the retained modes.
    """
    return SpectralField(u.grid, nonlinear_coeffs(u.coeffs, u.grid))


@lru_cache(maxsize=None)
def quadrature_points(K: int) -> int:
    # quartic integrands carry modes up to 4K; trapezoid is exact when n > 4K
    n = 2
    while n <= 4 * K:
        n *= 2
    return n


def quadrature(values: np.ndarray) -> float:
    """Trapezoid rule for a periodic integrand sampled on a uniform grid."""
    return float(2 * np.pi * np.mean(values, axis=-1))
