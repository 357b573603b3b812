"""Spatial white noise, its mollification, the resolvent field and the renormalised area.

File layout of a persisted :class:`EnhancedNoise` (``.npz``):

``header``
    JSON string with ``N``, ``eps``, ``mu``, ``seed``, ``profile``,
    ``convention``, ``c_eps`` and ``c_eps_grid``.
``xi_eps``, ``theta_eps``, ``area``
    complex ``N x N`` coefficient arrays in FFT order.
"""
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import interpolate, special

from . import _accel
from .paracalc import para_res
from .spectral import (
    SpectralField,
    TorusGrid,
    _negation_index,
    apply_multiplier,
    constant,
    k2_scale,
    resolvent,
)


@dataclass(frozen=True)
class WhiteNoise:
    seed: int
    grid: TorusGrid
    xi: SpectralField


def _generator(seed):
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.default_rng(seed)


def sample_white_noise(seed, grid):
    """Hermitian Gaussian coefficients with ``E|xi(k)|^2 = 1`` at every lattice point."""
    n = grid.n
    rng = _generator(seed)
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    idx = _negation_index(n)
    # (z + conj z(-k))/sqrt2: independent N(0,1/2) parts off the
    # self-conjugate points, a real N(0,1) on them
    coeffs = (z + np.conj(z[np.ix_(idx, idx)])) / math.sqrt(2.0)
    return WhiteNoise(int(seed), grid, SpectralField(grid, coeffs, True))


def pairing(xi, f):
    """``xi(f)`` for a real test function given as a field."""
    w = xi.xi if isinstance(xi, WhiteNoise) else xi
    if w.grid != f.grid:
        raise ValueError(f"grid mismatch: {w.grid} vs {f.grid}")
    return float(np.real(np.vdot(f.coeffs, w.coeffs)))


# ------------------------------------------------------------ profiles ---

class MollifierProfile:
    """Radial unit-mass mollifier, described through its Fourier symbol.

    ``symbol(rho)`` is ``F phi`` at frequency modulus ``rho`` (so the
    multiplier for scale ``eps`` at lattice point ``k`` is
    ``symbol(eps |k|)``).
    """

    name = "abstract"

    def symbol(self, rho):
        raise NotImplementedError

    def tail_bound(self, eps, mu, radius, scale, inner_sum):
        """Upper bound for the renormalisation sum over ``|k|_inf > radius``."""
        raise NotImplementedError

    def lattice_sum(self, eps, mu, radius, scale):
        n = np.arange(-radius, radius + 1, dtype=np.float64)
        total = 0.0
        for i in n:
            k2 = i * i + n * n
            s = self.symbol(eps * np.sqrt(k2))
            total += math.fsum(s * s / (scale * k2 + mu))
        return total


@dataclass(frozen=True)
class GaussianProfile(MollifierProfile):
    """Periodised Gaussian density with standard deviation ``sigma``."""

    sigma: float = 0.25
    name: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def decay(self, eps):
        # |F phi(eps k)|^2 = exp(-2 a |k|^2)
        return 2.0 * math.pi**2 * self.sigma**2 * eps * eps

    def symbol(self, rho):
        return np.exp(-2.0 * math.pi**2 * self.sigma**2 * np.asarray(rho, dtype=np.float64) ** 2)

    def lattice_sum(self, eps, mu, radius, scale):
        return _accel.gaussian_lattice_sum(radius, self.decay(eps), mu, scale)

    def tail_bound(self, eps, mu, radius, scale, inner_sum=None):
        a = self.decay(eps)
        g = np.exp(-2.0 * a * np.arange(-radius, radius + 1, dtype=np.float64) ** 2)
        t_in = math.fsum(g)
        t_out = math.sqrt(math.pi / (2.0 * a)) * special.erfc(radius * math.sqrt(2.0 * a))
        # sum over |k|_inf > R of exp(-2a|k|^2) = (t_in + t_out)^2 - t_in^2
        return float((2.0 * t_in * t_out + t_out * t_out) / (scale * radius * radius + mu))

    @property
    def ident(self):
        return f"gaussian(sigma={self.sigma!r})"


@lru_cache(maxsize=None)
def _bump_tables(points=4001, rho_max=64.0, nrho=16385):
    r = np.linspace(0.0, 1.0, points)
    prof = np.zeros_like(r)
    inside = r < 1.0
    prof[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    wts = np.full(points, r[1] - r[0])
    wts[0] *= 0.5
    wts[-1] *= 0.5
    mass = 2.0 * math.pi * np.sum(wts * prof * r)
    rho = np.linspace(0.0, rho_max, nrho)
    # Hankel transform, chunked to bound memory
    sym = np.empty_like(rho)
    for lo in range(0, nrho, 2048):
        block = special.j0(2.0 * math.pi * np.outer(rho[lo:lo + 2048], r))
        sym[lo:lo + 2048] = 2.0 * math.pi * (block * (wts * prof * r)).sum(axis=1) / mass
    # L^1 norm of the bi-Laplacian of the normalised bump, radial formula
    p = prof / mass
    h = r[1] - r[0]
    dp = np.gradient(p, h, edge_order=2)
    lap = np.gradient(dp, h, edge_order=2) + np.divide(dp, r, out=np.zeros_like(r), where=r > 0)
    lap[0] = 2.0 * np.gradient(dp, h, edge_order=2)[0]
    dl = np.gradient(lap, h, edge_order=2)
    bilap = np.gradient(dl, h, edge_order=2) + np.divide(dl, r, out=np.zeros_like(r), where=r > 0)
    bilap[0] = 2.0 * np.gradient(dl, h, edge_order=2)[0]
    l1 = 2.0 * math.pi * np.sum(wts * np.abs(bilap) * r)
    return rho, interpolate.CubicSpline(rho, sym), l1


@dataclass(frozen=True)
class BumpProfile(MollifierProfile):
    """Compactly supported radial bump ``exp(-1/(1-|x|^2))`` on the unit disc."""

    name: str = field(default="bump", init=False)

    def symbol(self, rho):
        table_rho, spline, _ = _bump_tables()
        rho = np.asarray(rho, dtype=np.float64)
        out = spline(np.minimum(rho, table_rho[-1]))
        # beyond the table only the decay bound is used
        return np.where(rho > table_rho[-1], 0.0, out)

    def tail_bound(self, eps, mu, radius, scale, inner_sum=None):
        _, _, l1 = _bump_tables()
        # |F phi(xi)| <= ||Delta^2 phi||_1 / (2 pi |xi|)^4 ; shell |k|_inf = n has 8n points with |k| >= n
        c = (l1 / (2.0 * math.pi * eps) ** 4) ** 2
        p = 10.0  # |F phi|^2 / |k|^2 decays like |k|^-10
        if scale * radius * radius + mu <= 0:
            return math.inf
        return 8.0 * c * radius ** (2.0 - p) / ((p - 2.0) * scale)

    @property
    def ident(self):
        return "bump"


PROFILES = {"gaussian": GaussianProfile, "bump": BumpProfile}


def make_profile(name="gaussian", **params):
    try:
        cls = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown mollifier profile {name!r}; choose from {sorted(PROFILES)}") from None
    return cls(**params)


def mollifier_symbol(grid, eps, profile):
    if not eps > 0:
        raise ValueError(f"mollification scale must be positive, got {eps}")
    return profile.symbol(eps * np.sqrt(grid.k_squared()))


def mollify(xi, eps, profile=None):
    """``xi_eps = phi_eps * xi`` as a spectral multiplication."""
    profile = profile or GaussianProfile()
    w = xi.xi if isinstance(xi, WhiteNoise) else xi
    sym = mollifier_symbol(w.grid, eps, profile)
    return SpectralField(w.grid, w.coeffs * sym, w.is_real)


# ------------------------------------------------- renormalisation ----

@dataclass(frozen=True)
class RenormResult:
    value: float
    radius: int
    tail_bound: float


def renorm_constant(eps, mu, profile=None, radius=None, convention="reduced", rtol=1e-8, max_radius=1 << 14):
    """``C_eps = sum_{k in Z^2} |F phi(eps k)|^2 / (|k|^2 + mu)``.

    The lattice sum is cut at ``|k|_inf <= R`` and ``R`` grows until the
    profile's tail bound drops below ``rtol`` relative. Returns a
    :class:`RenormResult`; ``float(...)`` of it is the constant.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    profile = profile or GaussianProfile()
    scale = k2_scale(convention)
    if radius is not None:
        radius = int(radius)
        value = profile.lattice_sum(eps, mu, radius, scale)
        bound = profile.tail_bound(eps, mu, radius, scale, value)
        if bound > rtol * value:
            raise ValueError(
                f"cutoff R={radius} certifies only a relative tail of {bound / value:.3g} > {rtol:g}"
            )
        return RenormResult(value, radius, bound)
    radius = max(16, int(math.ceil(2.0 / eps)))
    while True:
        bound = profile.tail_bound(eps, mu, radius, scale)
        if bound <= 0.5 * rtol * max(1.0, 1.0 / mu) or radius >= max_radius:
            break
        radius *= 2
    value = profile.lattice_sum(eps, mu, radius, scale)
    bound = profile.tail_bound(eps, mu, radius, scale, value)
    if bound > rtol * value:
        raise ValueError(
            f"tail tolerance {rtol:g} unreachable within R<={max_radius}; "
            f"best certified relative tail is {bound / value:.3g}"
        )
    return RenormResult(value, radius, bound)


def renorm_constant_grid(grid, eps, mu, profile=None, convention="reduced"):
    """The same sum restricted to the simulation lattice (``E[theta_eps o xi_eps]`` on the grid)."""
    profile = profile or GaussianProfile()
    k2 = grid.k_squared()
    s = profile.symbol(eps * np.sqrt(k2))
    return math.fsum((s * s / (k2_scale(convention) * k2 + mu)).ravel())


# ------------------------------------------------------ enhanced pair ----

@dataclass(frozen=True)
class EnhancedNoise:
    eps: float
    mu: float
    xi_eps: SpectralField
    theta_eps: SpectralField
    area: SpectralField
    c_eps: float
    seed: int
    profile: str = "gaussian(sigma=0.25)"
    convention: str = "reduced"
    c_eps_grid: float = float("nan")

    @property
    def grid(self):
        return self.xi_eps.grid

    def with_constant(self, c):
        """Same realisation, area recentred on a different constant."""
        shift = constant(self.grid, self.c_eps - c)
        return EnhancedNoise(self.eps, self.mu, self.xi_eps, self.theta_eps, self.area + shift,
                             float(c), self.seed, self.profile, self.convention, self.c_eps_grid)

    def save(self, path):
        header = {
            "N": self.grid.n,
            "eps": self.eps,
            "mu": self.mu,
            "seed": self.seed,
            "profile": self.profile,
            "convention": self.convention,
            "c_eps": self.c_eps,
            "c_eps_grid": self.c_eps_grid,
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                     xi_eps=self.xi_eps.coeffs, theta_eps=self.theta_eps.coeffs, area=self.area.coeffs)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            grid = TorusGrid(int(header["N"]))
            fields = {k: SpectralField(grid, np.array(data[k]), True) for k in ("xi_eps", "theta_eps", "area")}
        return cls(float(header["eps"]), float(header["mu"]), fields["xi_eps"], fields["theta_eps"],
                   fields["area"], float(header["c_eps"]), int(header["seed"]), header["profile"],
                   header["convention"], float(header["c_eps_grid"]))


def make_enhanced(xi, eps, mu, part, profile=None, convention="reduced", c_eps=None):
    """Mollify, solve for the resolvent field and subtract ``C_eps`` from the resonant product."""
    profile = profile or GaussianProfile()
    if not isinstance(xi, WhiteNoise):
        raise TypeError(f"make_enhanced needs a WhiteNoise sample (it records the seed), got {type(xi).__name__}")
    if xi.grid != part.grid:
        raise ValueError("noise and partition live on different grids")
    xi_eps = mollify(xi, eps, profile)
    theta = apply_multiplier(resolvent(xi.grid, mu, convention), xi_eps)
    if c_eps is None:
        c_eps = float(renorm_constant(eps, mu, profile, convention=convention).value)
    c_grid = renorm_constant_grid(xi.grid, eps, mu, profile, convention)
    area = para_res(part, theta, xi_eps) - constant(xi.grid, c_eps)
    return EnhancedNoise(float(eps), float(mu), xi_eps, theta, area, float(c_eps), xi.seed,
                         getattr(profile, "ident", profile.name), convention, c_grid)


def zero_noise(grid, mu, eps=1.0, convention="reduced"):
    """Enhanced pair of the zero noise (used for deterministic reductions)."""
    z = SpectralField(grid, np.zeros(grid.shape, dtype=np.complex128), True)
    return EnhancedNoise(float(eps), float(mu), z, z, z, 0.0, -1, "none", convention, 0.0)
