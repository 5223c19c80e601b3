"""Dirichlet-sine eigenbasis of A = -d^2/dxi^2 on (0, 1).

Eigenfunctions e_k(xi) = sqrt(2) sin(k pi xi) (orthonormal on (0, 1)) with
eigenvalues lambda_k = k^2 pi^2. Grid values live on the interior points
xi_j = j / (M + 1), j = 1..M; the boundary values are zero and never stored.

Fast transforms use the type-1 sine / cosine transforms from scipy.fft; the
dense O(NM) matrices are kept as a reference implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft


class NonFiniteError(FloatingPointError):
    """A field picked up NaN or Inf entries."""


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")


class SpectralField:
    """N Dirichlet-sine mode coefficients, mode k stored at index k-1."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float).reshape(-1)
        if c.size < 1:
            raise ValueError("a SpectralField needs at least one mode")
        _check_finite(c, "SpectralField")
        c.setflags(write=False)
        self.coeffs = c

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, n: int) -> "SpectralField":
        return cls(np.zeros(n))

    @classmethod
    def unit(cls, k: int, n: int, scale: float = 1.0) -> "SpectralField":
        if not 1 <= k <= n:
            raise ValueError(f"mode {k} outside 1..{n}")
        c = np.zeros(n)
        c[k - 1] = scale
        return cls(c)

    def resized(self, n: int) -> "SpectralField":
        """Truncate or zero-pad to n modes."""
        c = np.zeros(n)
        m = min(n, self.n_modes)
        c[:m] = self.coeffs[:m]
        return SpectralField(c)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "SpectralField":
        return SpectralField(self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs)

    def __eq__(self, other) -> bool:
        return isinstance(other, SpectralField) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self) -> str:
        return f"SpectralField(n_modes={self.n_modes})"


class GridField:
    """Samples on the interior grid xi_j = j/(M+1), j = 1..M."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size < 1:
            raise ValueError("a GridField needs at least one point")
        _check_finite(v, "GridField")
        v.setflags(write=False)
        self.values = v

    @property
    def m_points(self) -> int:
        return self.values.size

    @classmethod
    def from_function(cls, fn, m: int) -> "GridField":
        return cls(fn(grid_points(m)))

    def __repr__(self) -> str:
        return f"GridField(m_points={self.m_points})"


def _positive_int(n, name: str) -> int:
    if int(n) != n or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def eigenvalue(k) -> float:
    """lambda_k = k^2 pi^2."""
    k = _positive_int(k, "k")
    return k * k * math.pi**2


def eigenvalues(n: int) -> np.ndarray:
    k = np.arange(1, _positive_int(n, "n") + 1, dtype=float)
    return (k * math.pi) ** 2


def grid_points(m: int) -> np.ndarray:
    m = _positive_int(m, "M")
    return np.arange(1, m + 1) / (m + 1.0)


def dealiased_points(n: int, delta: float) -> int:
    """M = ceil((delta + 2) / 2) * N, the generalized 3/2-rule."""
    return int(math.ceil((delta + 2.0) / 2.0)) * _positive_int(n, "N")


# fast transforms on raw arrays (last axis)

def modes_from_grid(g: np.ndarray, n: int) -> np.ndarray:
    m = g.shape[-1]
    c = sfft.dst(g, type=1, axis=-1) / (math.sqrt(2.0) * (m + 1))
    if n <= m:
        return c[..., :n]
    out = np.zeros(g.shape[:-1] + (n,))
    out[..., :m] = c
    return out


def _pad(c: np.ndarray, m: int) -> np.ndarray:
    n = c.shape[-1]
    if n == m:
        return c
    if n > m:
        # modes above M alias onto the grid; they are dropped here
        return c[..., :m]
    out = np.zeros(c.shape[:-1] + (m,))
    out[..., :n] = c
    return out


def grid_from_modes(c: np.ndarray, m: int) -> np.ndarray:
    return sfft.dst(_pad(c, m), type=1, axis=-1) / math.sqrt(2.0)


def derivative_on_grid(c: np.ndarray, m: int, with_boundary: bool = False) -> np.ndarray:
    """u'(xi_j) of u = sum c_k e_k on j = 0..M+1 (or interior only)."""
    n = c.shape[-1]
    if n > m:
        raise ValueError("derivative grid needs M >= N")
    a = np.zeros(c.shape[:-1] + (m + 2,))
    a[..., 1 : n + 1] = c * (np.arange(1, n + 1) * math.pi * math.sqrt(2.0))
    d = sfft.dct(a, type=1, axis=-1) / 2.0
    return d if with_boundary else d[..., 1:-1]


def project_derivative(f: np.ndarray, n: int) -> np.ndarray:
    """Mode coefficients of d/dxi F by parts: -(F, e_k').

    ``f`` holds F on the interior grid; F is taken to vanish at both ends.
    """
    m = f.shape[-1]
    if n > m:
        raise ValueError("projection grid needs M >= N")
    a = np.zeros(f.shape[:-1] + (m + 2,))
    a[..., 1:-1] = f
    y = sfft.dct(a, type=1, axis=-1)[..., 1 : n + 1]
    k = np.arange(1, n + 1) * math.pi * math.sqrt(2.0)
    return -k * y / (2.0 * (m + 1))


def quad(f: np.ndarray) -> np.ndarray:
    """Trapezoid rule on the interior grid with zero end values."""
    return f.sum(axis=-1) / (f.shape[-1] + 1.0)


# dense reference transforms

@lru_cache(maxsize=32)
def _synthesis_matrix(n: int, m: int) -> np.ndarray:
    xi = grid_points(m)
    k = np.arange(1, n + 1)
    s = math.sqrt(2.0) * np.sin(np.pi * np.outer(xi, k))
    s.setflags(write=False)
    return s


def reference_to_modes(g: np.ndarray, n: int) -> np.ndarray:
    m = g.shape[-1]
    return g @ _synthesis_matrix(n, m) / (m + 1.0)


def reference_to_grid(c: np.ndarray, m: int) -> np.ndarray:
    n = c.shape[-1]
    return c @ _synthesis_matrix(n, m).T


def reference_derivative(c: np.ndarray, m: int) -> np.ndarray:
    xi = grid_points(m)
    k = np.arange(1, c.shape[-1] + 1)
    d = math.sqrt(2.0) * (k * math.pi) * np.cos(np.pi * np.outer(xi, k))
    return c @ d.T


# public operations on fields

def to_modes(g: GridField, n: int) -> SpectralField:
    n = _positive_int(n, "N")
    return SpectralField(modes_from_grid(g.values, n))


def to_grid(f: SpectralField, m: int) -> GridField:
    m = _positive_int(m, "M")
    return GridField(grid_from_modes(f.coeffs, m))


def semigroup_factors(n: int, t: float, nu: float, kappa: float = 0.0) -> np.ndarray:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return np.exp(-(nu * eigenvalues(n) + kappa) * t)


def apply_semigroup(f: SpectralField, t: float, nu: float, kappa: float = 0.0) -> SpectralField:
    """e^{-kappa t} e^{-nu t A} f."""
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    return SpectralField(f.coeffs * semigroup_factors(f.n_modes, t, nu, kappa))


def fractional_power(f: SpectralField, sigma: float) -> SpectralField:
    """A^sigma f, mode k scaled by lambda_k^sigma."""
    if sigma == 0:
        return f
    return SpectralField(f.coeffs * eigenvalues(f.n_modes) ** sigma)


def smoothing_bound(sigma: float, t: float, nu: float) -> float:
    """sup_{x>0} x^sigma e^{-nu x t} = (sigma / (e nu t))^sigma."""
    return (sigma / (math.e * nu * t)) ** sigma


@dataclass(frozen=True)
class Norms:
    l2: float
    h1_semi: float
    _coeffs: np.ndarray
    _m: int

    def lp(self, p: float) -> float:
        if p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        u = grid_from_modes(self._coeffs, self._m)
        return float(quad(np.abs(u) ** p) ** (1.0 / p))


def norms(f: SpectralField, delta: float = 1.0, m: int | None = None) -> Norms:
    """L2 norm (Parseval), H1 seminorm and a grid L^p evaluator.

    The L^p quadrature uses the dealiased grid for exponent delta unless ``m``
    is given.
    """
    c = f.coeffs
    lam = eigenvalues(f.n_modes)
    mm = dealiased_points(f.n_modes, delta) if m is None else _positive_int(m, "M")
    return Norms(
        l2=float(np.sqrt(np.dot(c, c))),
        h1_semi=float(np.sqrt(np.dot(lam, c * c))),
        _coeffs=c,
        _m=mm,
    )


class SpectralBasis:
    """Precomputed per-(N, M) data shared read-only by workers."""

    def __init__(self, n: int, m: int | None = None, delta: float = 1.0):
        self.n = _positive_int(n, "N")
        self.m = dealiased_points(self.n, delta) if m is None else _positive_int(m, "M")
        if self.m < self.n:
            raise ValueError("grid must resolve every mode (M >= N)")
        self.lam = eigenvalues(self.n)
        self.lam.setflags(write=False)
        self.xi = grid_points(self.m)

    def to_grid(self, c: np.ndarray) -> np.ndarray:
        return grid_from_modes(c, self.m)

    def to_modes(self, g: np.ndarray) -> np.ndarray:
        return modes_from_grid(g, self.n)

    def derivative(self, c: np.ndarray) -> np.ndarray:
        return derivative_on_grid(c, self.m)

    def project_derivative(self, f: np.ndarray) -> np.ndarray:
        return project_derivative(f, self.n)

    def quad(self, f: np.ndarray) -> np.ndarray:
        return quad(f)
