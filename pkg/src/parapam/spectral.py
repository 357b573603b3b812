"""Fields on the 2-D unit torus and their Fourier representation.

A field is stored by its Fourier coefficients ``c(k)`` on the lattice
``k in {-N/2, ..., N/2-1}^2`` (numpy FFT ordering), normalised so that

    u(x) = sum_k c(k) exp(2 pi i k.x),   x = (i/N, j/N).

Nyquist coefficients are read symmetrically: a coefficient stored at
``-N/2`` stands for half its value at ``-N/2`` and half at ``+N/2``.
That is the convention under which a real grid function is a real
trigonometric polynomial, and it is the one used when zero-padding for
alias-free products.
"""
import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import _accel

DEBUG = bool(os.environ.get("PARAPAM_DEBUG"))

# -Delta acting on exp(2 pi i k.x) is 4 pi^2 |k|^2; the renormalisation
# constant is written with |k|^2 + mu. "reduced" uses that symbol throughout.
SYMBOL_CONVENTIONS = {"reduced": 1.0, "exact": 4.0 * math.pi ** 2}


def k2_scale(convention):
    try:
        return SYMBOL_CONVENTIONS[convention]
    except KeyError:
        raise ValueError(
            f"unknown symbol convention {convention!r}; expected one of {sorted(SYMBOL_CONVENTIONS)}"
        ) from None


@dataclass(frozen=True)
class TorusGrid:
    """Uniform ``n x n`` grid on the unit torus."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 16 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 16, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dimension(self):
        return 2

    @property
    def spacing(self):
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n, self.n)

    def coordinates(self):
        x = np.arange(self.n) / self.n
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self):
        """Integer lattice ``(k1, k2)`` in FFT order, each of shape ``(n, n)``."""
        return _wavenumbers(self.n)

    def k_squared(self):
        return _k_squared(self.n)


@lru_cache(maxsize=None)
def _wavenumbers(n):
    k = np.fft.fftfreq(n, d=1.0 / n).round().astype(np.int64)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    k1.flags.writeable = False
    k2.flags.writeable = False
    return k1, k2


@lru_cache(maxsize=None)
def _k_squared(n):
    k1, k2 = _wavenumbers(n)
    out = (k1 * k1 + k2 * k2).astype(np.float64)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _negation_index(n):
    # index of -k (mod n) along one axis
    return (-np.arange(n)) % n


def hermitian_defect(coeffs):
    """Max of ``|c(-k) - conj(c(k))|`` relative to ``max|c|``."""
    n = coeffs.shape[0]
    idx = _negation_index(n)
    partner = coeffs[np.ix_(idx, idx)]
    scale = max(np.abs(coeffs).max(), 1e-300)
    return float(np.abs(partner - np.conj(coeffs)).max() / scale)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a field on a :class:`TorusGrid`."""

    grid: TorusGrid
    coeffs: np.ndarray
    is_real: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient array has shape {c.shape}, grid is {self.grid.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def values(self):
        """Grid values (real array when ``is_real``)."""
        v = sfft.ifft2(self.coeffs) * self.grid.n ** 2
        return v.real.copy() if self.is_real else v

    # linear structure -----------------------------------------------------
    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError(f"grid mismatch: {self.grid} vs {other.grid}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.is_real and other.is_real)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.is_real and other.is_real)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.is_real)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        real = self.is_real and np.isrealobj(scalar)
        return SpectralField(self.grid, self.coeffs * scalar, real)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    # norms ----------------------------------------------------------------
    def l2(self):
        """``||u||_{L^2(T^2)}`` via Parseval."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def linf(self):
        """Grid maximum of ``|u|``."""
        return float(np.abs(self.values()).max())

    def mean(self):
        c0 = self.coeffs[0, 0]
        return float(c0.real) if self.is_real else complex(c0)


def zeros(grid):
    return SpectralField(grid, np.zeros(grid.shape, dtype=np.complex128))


def constant(grid, c):
    coeffs = np.zeros(grid.shape, dtype=np.complex128)
    coeffs[0, 0] = c
    return SpectralField(grid, coeffs, np.isrealobj(c))


def inner(a, b):
    """Real ``L^2`` pairing ``<a, b> = int a b dx`` of two real fields."""
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    return float(np.real(np.vdot(b.coeffs, a.coeffs)))


def forward_transform(values, grid=None):
    """Real grid values -> :class:`SpectralField`."""
    v = np.asarray(values)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValueError(f"expected an N x N array, got shape {v.shape}")
    if np.iscomplexobj(v):
        raise ValueError("forward_transform expects real values; use from_complex_values")
    bad = ~np.isfinite(v)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite input at index ({i}, {j}): {v[i, j]!r}")
    grid = grid or TorusGrid(v.shape[0])
    if grid.shape != v.shape:
        raise ValueError(f"values have shape {v.shape}, grid is {grid.shape}")
    coeffs = sfft.fft2(v.astype(np.float64)) / grid.n ** 2
    return SpectralField(grid, coeffs, True)


def from_complex_values(values, grid=None):
    v = np.asarray(values, dtype=np.complex128)
    grid = grid or TorusGrid(v.shape[0])
    return SpectralField(grid, sfft.fft2(v) / grid.n ** 2, False)


def inverse_transform(field):
    return field.values()


# ------------------------------------------------------------ padding ----

def _pad_axis(c, m, axis):
    n = c.shape[axis]
    h = n // 2
    shape = list(c.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=c.dtype)

    def sl(a, b):
        s = [slice(None)] * c.ndim
        s[axis] = slice(a, b)
        return tuple(s)

    out[sl(0, h)] = c[sl(0, h)]
    out[sl(m - h + 1, m)] = c[sl(h + 1, n)]
    nyq = 0.5 * c[sl(h, h + 1)]
    out[sl(h, h + 1)] = nyq
    out[sl(m - h, m - h + 1)] = nyq
    return out


def _truncate_axis(c, n, axis):
    m = c.shape[axis]
    h = n // 2
    shape = list(c.shape)
    shape[axis] = n
    out = np.empty(shape, dtype=c.dtype)

    def sl(a, b):
        s = [slice(None)] * c.ndim
        s[axis] = slice(a, b)
        return tuple(s)

    out[sl(0, h)] = c[sl(0, h)]
    out[sl(h + 1, n)] = c[sl(m - h + 1, m)]
    out[sl(h, h + 1)] = c[sl(m - h, m - h + 1)] + c[sl(h, h + 1)]
    return out


def pad_coeffs(coeffs, m):
    """Embed ``(..., n, n)`` coefficients into an ``(..., m, m)`` lattice."""
    return _pad_axis(_pad_axis(coeffs, m, coeffs.ndim - 2), m, coeffs.ndim - 1)


def truncate_coeffs(coeffs, n):
    """Restrict ``(..., m, m)`` coefficients back to the ``n x n`` lattice."""
    return _truncate_axis(_truncate_axis(coeffs, n, coeffs.ndim - 2), n, coeffs.ndim - 1)


def padded_values(coeffs, m, real=True):
    """Values on the ``m x m`` grid of the band-limited field ``coeffs``."""
    v = sfft.ifft2(pad_coeffs(coeffs, m), axes=(-2, -1)) * (m * m)
    return v.real if real else v


def from_padded_values(values, grid, real=True):
    """Project values on a padded grid back onto ``grid``'s lattice."""
    m = values.shape[-1]
    coeffs = truncate_coeffs(sfft.fft2(values, axes=(-2, -1)) / (m * m), grid.n)
    return SpectralField(grid, coeffs, real)


def padding_factor(degree):
    """Smallest integer factor keeping a degree-``degree`` product alias-free.

    A product of ``degree`` fields reaches ``|k| = degree * N/2``; on a
    grid of ``M`` points the alias ``k - M`` stays off the retained lattice
    (Nyquist line included) iff ``M > (degree + 1) N / 2``.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return (degree + 1) // 2 + 1


def dealiased_product(a, b):
    """Exact product of two band-limited fields, restricted to the lattice."""
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    real = a.is_real and b.is_real
    m = 2 * a.grid.n
    prod = padded_values(a.coeffs, m, real) * padded_values(b.coeffs, m, real)
    out = from_padded_values(prod, a.grid, real)
    if DEBUG and real:
        assert hermitian_defect(out.coeffs) < 1e-12
    return out


def polynomial(coeffs, u, degree_hint=None):
    """Alias-free ``sum_i coeffs[i] u^i`` for a real field ``u``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    deg = len(coeffs) - 1
    while deg > 0 and coeffs[deg] == 0.0:
        deg -= 1
    if deg == 0:
        return constant(u.grid, float(coeffs[0]))
    m = padding_factor(degree_hint or deg) * u.grid.n
    vals = _accel.horner(coeffs[: deg + 1], padded_values(u.coeffs, m, True))
    return from_padded_values(vals, u.grid, True)


# ----------------------------------------------------------- multipliers --

@dataclass(frozen=True, eq=False)
class Multiplier:
    """A Fourier multiplier tabulated on the lattice."""

    grid: TorusGrid
    symbol: np.ndarray
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.symbol)
        if s.shape != self.grid.shape:
            raise ValueError(f"symbol has shape {s.shape}, grid is {self.grid.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"multiplier {self.name!r} has non-finite entries")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "symbol", s)

    @property
    def is_real_even(self):
        if np.iscomplexobj(self.symbol) and np.abs(self.symbol.imag).max() > 0:
            return False
        idx = _negation_index(self.grid.n)
        s = self.symbol.real
        return bool(np.array_equal(s, s[np.ix_(idx, idx)]))

    def compose(self, other):
        return Multiplier(self.grid, self.symbol * other.symbol, f"{self.name}*{other.name}")


def generator_symbol(grid, mu, convention="reduced"):
    """Symbol ``m(k)`` of ``-Delta + mu``."""
    if mu <= 0:
        raise ValueError(f"mass mu must be positive, got {mu}")
    return k2_scale(convention) * grid.k_squared() + mu


def resolvent(grid, mu, convention="reduced"):
    return Multiplier(grid, 1.0 / generator_symbol(grid, mu, convention), f"resolvent(mu={mu})")


def heat(grid, t, mu, convention="reduced"):
    """Semigroup ``exp(t(Delta - mu))``."""
    if t < 0:
        raise ValueError("heat multiplier needs t >= 0")
    return Multiplier(grid, np.exp(-t * generator_symbol(grid, mu, convention)), f"heat({t})")


def generator(grid, mu, convention="reduced"):
    return Multiplier(grid, generator_symbol(grid, mu, convention), f"generator(mu={mu})")


def apply_multiplier(m, u):
    if m.grid != u.grid:
        raise ValueError(f"grid mismatch: {m.grid} vs {u.grid}")
    real = u.is_real and m.is_real_even
    out = SpectralField(u.grid, u.coeffs * m.symbol, real)
    if DEBUG and real:
        assert hermitian_defect(out.coeffs) < 1e-12
    return out


def gradient(u, convention="reduced"):
    """``(d1 u, d2 u)``; with the reduced convention the symbol is ``i k``."""
    k1, k2 = u.grid.wavenumbers()
    scale = math.sqrt(k2_scale(convention))
    return (
        SpectralField(u.grid, 1j * scale * k1 * u.coeffs, u.is_real),
        SpectralField(u.grid, 1j * scale * k2 * u.coeffs, u.is_real),
    )


def random_field(grid, rng, decay=0.0, band=None, amplitude=1.0):
    """Real Gaussian field with coefficient std ``amplitude (1+|k|)^-decay``.

    ``band=(lo, hi)`` keeps only ``lo <= |k| < hi``.
    """
    n = grid.n
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    idx = _negation_index(n)
    herm = (z + np.conj(z[np.ix_(idx, idx)])) / math.sqrt(2.0)
    kabs = np.sqrt(grid.k_squared())
    coeffs = amplitude * herm * (1.0 + kabs) ** (-decay)
    if band is not None:
        lo, hi = band
        coeffs = np.where((kabs >= lo) & (kabs < hi), coeffs, 0.0)
    return SpectralField(grid, coeffs, True)
