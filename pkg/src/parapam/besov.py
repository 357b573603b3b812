"""Littlewood-Paley blocks, Besov norms, time weights and localizers.

The dyadic partition is generated by a radial cut-off ``phi`` with
``phi = 1`` on ``[0, 1]``, ``phi = 0`` on ``[2, inf)`` and a C-infinity
bridge in between. Blocks are

    chi(k)   = phi(2|k|)                         (block -1, supported in |k| < 1)
    rho_j(k) = phi(2^-j |k|) - phi(2^(1-j) |k|)   (block j >= 0, 2^(j-1) <= |k| <= 2^(j+1))

so that ``chi + sum_{j<=J} rho_j = phi(2^-J |.|)`` telescopes to one on
the whole lattice once ``2^J`` exceeds the largest lattice radius.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
import scipy.fft as sfft

from . import _accel
from .spectral import SpectralField, TorusGrid

GOLDEN_FILE = "partition_golden.npz"
GOLDEN_SIZES = (16, 32, 64, 128)


def _bridge(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def cutoff(r):
    """Smooth radial cut-off: 1 for ``r <= 1``, 0 for ``r >= 2``."""
    r = np.asarray(r, dtype=np.float64)
    a = _bridge(2.0 - r)
    b = _bridge(r - 1.0)
    with np.errstate(invalid="ignore"):
        out = np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, a / (a + b)))
    return out


def jmax_for(n):
    """Index of the last block that meets the ``n x n`` lattice."""
    rmax = math.sqrt(2.0) * (n // 2)
    return int(math.ceil(math.log2(rmax)))


def block_profile(k2, jmax):
    """Block values at squared radii ``k2``; row 0 is block -1."""
    r = np.sqrt(np.asarray(k2, dtype=np.float64))
    rows = [cutoff(2.0 * r)]
    for j in range(jmax + 1):
        rows.append(cutoff(r / 2.0 ** j) - cutoff(r / 2.0 ** (j - 1)))
    return np.array(rows)


@lru_cache(maxsize=None)
def _golden_tables():
    try:
        data = resources.files("parapam").joinpath("data").joinpath(GOLDEN_FILE).read_bytes()
    except FileNotFoundError:
        return {}
    import io

    with np.load(io.BytesIO(data)) as z:
        return {key: z[key] for key in z.files}


def write_golden(path, sizes=GOLDEN_SIZES):
    """Tabulate the partition on the distinct lattice radii of each size."""
    arrays = {}
    for n in sizes:
        grid = TorusGrid(n)
        k2 = np.unique(grid.k_squared())
        arrays[f"N{n}_k2"] = k2
        arrays[f"N{n}_table"] = block_profile(k2, jmax_for(n))
    np.savez(path, **arrays)


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """Tabulated dyadic partition on a grid.

    ``blocks[0]`` is ``chi`` (block -1) and ``blocks[j + 1]`` is ``rho_j``.
    """

    grid: TorusGrid
    blocks: np.ndarray
    jmax: int
    source: str = "computed"

    @property
    def chi(self):
        return self.blocks[0]

    def rho(self, j):
        return self.blocks[self._row(j)]

    @property
    def nblocks(self):
        return self.jmax + 2

    @property
    def indices(self):
        return range(-1, self.jmax + 1)

    def _row(self, j):
        if not -1 <= j <= self.jmax:
            raise ValueError(f"block index {j} outside [-1, {self.jmax}]")
        return j + 1

    def lowpass(self, j):
        """Symbol of ``S_j = sum_{i <= j} Delta_i`` (zero for ``j < -1``)."""
        if j < -1:
            return np.zeros(self.grid.shape)
        return self._cumulative[min(j, self.jmax) + 1]

    @property
    def _cumulative(self):
        c = self.__dict__.get("_cum")
        if c is None:
            c = np.cumsum(self.blocks, axis=0)
            c.flags.writeable = False
            self.__dict__["_cum"] = c
        return c


def build_partition(grid, smoothing="bump", golden=True):
    """Dyadic partition of unity for ``grid``.

    When ``golden`` is set and a frozen tabulation for this grid size
    ships with the package, the table is read from it so results do not
    depend on the platform's ``exp``.
    """
    if smoothing != "bump":
        raise ValueError(f"unsupported cut-off profile {smoothing!r}")
    jmax = jmax_for(grid.n)
    if jmax < 2:
        raise ValueError(f"grid of size {grid.n} is too small for a dyadic partition")
    k2 = grid.k_squared()
    tables = _golden_tables() if golden else {}
    key = f"N{grid.n}"
    if f"{key}_table" in tables:
        radii, table = tables[f"{key}_k2"], tables[f"{key}_table"]
        idx = np.searchsorted(radii, k2)
        blocks = table[:, idx]
        source = "golden"
    else:
        radii, inverse = np.unique(k2, return_inverse=True)
        blocks = block_profile(radii, jmax)[:, inverse.reshape(k2.shape)]
        source = "computed"
    blocks = np.ascontiguousarray(blocks)
    blocks.flags.writeable = False
    return DyadicPartition(grid, blocks, jmax, source)


def _check_grid(part, u):
    if part.grid != u.grid:
        raise ValueError(f"grid mismatch: partition on {part.grid}, field on {u.grid}")


def lp_block(part, j, u):
    """``Delta_j u``."""
    _check_grid(part, u)
    return SpectralField(u.grid, part.rho(j) * u.coeffs, u.is_real)


def lp_blocks(part, u):
    """All blocks' coefficients as a ``(nblocks, N, N)`` stack."""
    _check_grid(part, u)
    return part.blocks * u.coeffs[None]


def block_values(part, u):
    """Grid values of every block, ``(nblocks, N, N)``."""
    n = u.grid.n
    v = sfft.ifft2(lp_blocks(part, u), axes=(-2, -1)) * (n * n)
    return v.real if u.is_real else v


def block_norms(part, u, p):
    """``||Delta_j u||_{L^p}`` for ``j = -1..jmax`` with ``p`` in {2, inf}."""
    if p == 2:
        return np.sqrt(np.sum(np.abs(lp_blocks(part, u)) ** 2, axis=(1, 2)))
    if p in (np.inf, "inf"):
        return _accel.block_sup(block_values(part, u))
    raise ValueError(f"unsupported integrability p={p!r}; use 2 or inf")


def besov_norm(part, u, alpha, p=np.inf, q=np.inf):
    """Discrete ``B^alpha_{p,q}`` norm; ``C^alpha`` is ``(inf, inf)``, ``H^alpha`` is ``(2, 2)``."""
    if q not in (2, np.inf, "inf"):
        raise ValueError(f"unsupported summability q={q!r}; use 2 or inf")
    norms = block_norms(part, u, p)
    j = np.arange(-1, part.jmax + 1)
    weighted = 2.0 ** (j * alpha) * norms
    if q == 2:
        return float(np.sqrt(np.sum(weighted ** 2)))
    return float(weighted.max())


def holder_norm(part, u, alpha):
    return besov_norm(part, u, alpha, np.inf, np.inf)


def sobolev_norm(part, u, alpha):
    return besov_norm(part, u, alpha, 2, 2)


def sobolev_weight(part, s):
    """Multiplier ``w(k) = sum_j 2^(2js) rho_j(k)^2`` whose quadratic form is ``||.||^2_{H^s}``."""
    j = np.arange(-1, part.jmax + 1)
    return np.tensordot(2.0 ** (2 * j * s), part.blocks ** 2, axes=(0, 0))


def sobolev_inner(part, a, b, s):
    """Bilinear form polarising ``||.||^2_{H^s}``."""
    _check_grid(part, a)
    _check_grid(part, b)
    return float(np.real(np.sum(sobolev_weight(part, s) * a.coeffs * np.conj(b.coeffs))))


# -------------------------------------------------------------- localizer --

def localizer_symbols(part, n_loc, gamma):
    """Symbols of ``(U_<=, U_>)`` for cut level ``n_loc`` and decay ``gamma``."""
    if gamma <= 0:
        raise ValueError(f"localizer decay gamma must be positive, got {gamma}")
    high = np.zeros(part.grid.shape)
    for j in part.indices:
        if j > n_loc:
            high = high + (1.0 - 2.0 ** (-j * gamma)) * part.rho(j)
    return 1.0 - high, high


def localize(part, u, n_loc, gamma=1.0):
    """Split ``u`` into ``(U_<= u, U_> u)``; the parts add up to ``u``."""
    _check_grid(part, u)
    _, high = localizer_symbols(part, n_loc, gamma)
    hi = SpectralField(u.grid, high * u.coeffs, u.is_real)
    lo = SpectralField(u.grid, u.coeffs - hi.coeffs, u.is_real)
    return lo, hi


def choose_localization_params(current_norm, kappa):
    """Levels ``(L, K)`` with ``1 + norm = 2^((1-kappa) L) = 2^((2-3 kappa) K)``."""
    if current_norm < 0 or not math.isfinite(current_norm):
        raise ValueError(f"norm must be finite and >= 0, got {current_norm}")
    if not 0 < kappa < 1.0 / 3.0:
        raise ValueError(f"kappa must lie in (0, 1/3), got {kappa}")
    level = math.log2(1.0 + current_norm)
    return level / (1.0 - kappa), level / (2.0 - 3.0 * kappa)


# ------------------------------------------------------------ time weights --

def tau(t):
    """``tau(t) = 1 - exp(-t)``."""
    return -np.expm1(-np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class TimeWeight:
    """Time weight ``eta(t)``.

    ``tau_power``: ``tau^power``; ``rho_ansatz``: ``tau^(1 + 1/(k-2) + (3 alpha - 2)/2)``;
    ``unit``: ``eta = 1``. The extra power ``theta`` raises the result to ``1 + theta``.
    """

    kind: str = "tau_power"
    power: float = 1.0
    k: int = 4
    alpha: float = 0.8
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("tau_power", "rho_ansatz", "unit"):
            raise ValueError(f"unknown time weight kind {self.kind!r}")
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")

    @property
    def exponent(self):
        if self.kind == "unit":
            return 0.0
        if self.kind == "rho_ansatz":
            base = 1.0 + 1.0 / (self.k - 2) + (3.0 * self.alpha - 2.0) / 2.0
        else:
            base = self.power
        return base * (1.0 + self.theta)

    def __call__(self, t):
        e = self.exponent
        if e == 0.0:
            return np.ones_like(np.asarray(t, dtype=np.float64))
        return tau(t) ** e

    @property
    def label(self):
        return f"tau^{self.exponent:.6g}"


# ---------------------------------------------------------------- reports --

@dataclass(frozen=True)
class NormSpec:
    """Which norm to take: ``besov`` (with alpha, p, q), ``linf`` or ``l2``."""

    kind: str = "besov"
    alpha: float = 0.0
    p: float = np.inf
    q: float = np.inf

    def evaluate(self, part, u):
        if self.kind == "linf":
            return u.linf()
        if self.kind == "l2":
            return u.l2()
        if self.kind == "besov":
            return besov_norm(part, u, self.alpha, self.p, self.q)
        raise ValueError(f"unknown norm kind {self.kind!r}")

    @property
    def label(self):
        if self.kind != "besov":
            return self.kind
        return f"B^{self.alpha:g}_{{{self.p},{self.q}}}"


@dataclass
class NormReport:
    """Named time series of norm values sharing one increasing time axis."""

    times: list = field(default_factory=list)
    entries: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def record(self, t, values):
        t = float(t)
        if self.times and not t > self.times[-1]:
            raise ValueError(f"report times must increase: {t} after {self.times[-1]}")
        for name, v in values.items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"norm entry {name!r} at t={t} is {v}; expected finite and >= 0")
        row = len(self.times)
        for name in set(self.entries) | set(values):
            series = self.entries.setdefault(name, [math.nan] * row)
            series.append(float(values.get(name, math.nan)))
        self.times.append(t)

    def series(self, name):
        return np.asarray(self.entries[name])

    def sup(self, name):
        return float(np.nanmax(self.series(name)))

    def tail(self, rows):
        out = NormReport(self.times[-rows:], {k: v[-rows:] for k, v in self.entries.items()}, dict(self.meta))
        return out


def weighted_norm_series(snapshots, weight, spec, part=None, holder_beta=None):
    """Weighted norms ``eta(t_i) ||f(t_i)||`` with running supremum.

    ``snapshots`` is a sequence of ``(t, SpectralField)`` with increasing
    times. With ``holder_beta`` the report's meta carries the seminorm
    ``sup_{t>s} ||eta(t) f(t) - eta(s) f(s)|| / |t - s|^beta`` over pairs.
    """
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("weighted_norm_series needs at least one snapshot")
    report = NormReport(meta={"weight": weight.label, "norm": spec.label})
    running = 0.0
    for t, f in snaps:
        value = float(weight(t)) * spec.evaluate(part, f)
        running = max(running, value)
        report.record(t, {"value": value, "running_sup": running})
    report.meta["sup"] = running
    if holder_beta is not None:
        if not 0 < holder_beta <= 1:
            raise ValueError("holder exponent must be in (0, 1]")
        scaled = [(t, f * float(weight(t))) for t, f in snaps]
        semi = 0.0
        for i in range(len(scaled)):
            for j in range(i):
                (t, ft), (s, fs) = scaled[i], scaled[j]
                semi = max(semi, spec.evaluate(part, ft - fs) / (t - s) ** holder_beta)
        report.meta["holder_seminorm"] = semi
        report.meta["holder_norm"] = running + semi
    return report
