"""Bony paraproducts, resonant products, commutators and the time-mollified paraproduct.

Every product here is alias-free: blocks are evaluated on a grid of
twice the resolution, multiplied there and projected back, so the Bony
identity ``uv = u < v + u o v + u > v`` holds to rounding.
"""
import math
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import _accel
from .besov import lp_blocks
from .spectral import (
    SpectralField,
    dealiased_product,
    from_padded_values,
    inner,
    pad_coeffs,
)
import scipy.fft as sfft


class PaddedBlocks:
    """Littlewood-Paley blocks of one field, evaluated on the padded grid.

    Building this costs one batched FFT; the paraproduct routines accept
    it in place of a :class:`SpectralField` so that fields reused every
    time step (noise, resolvent field) are transformed once.
    """

    def __init__(self, part, u):
        if part.grid != u.grid:
            raise ValueError(f"grid mismatch: partition on {part.grid}, field on {u.grid}")
        self.part = part
        self.field = u
        self.m = 2 * u.grid.n
        stack = sfft.ifft2(pad_coeffs(lp_blocks(part, u), self.m), axes=(-2, -1)) * (self.m * self.m)
        self.stack = np.ascontiguousarray(stack.real if u.is_real else stack)
        self._cum = None

    @property
    def is_real(self):
        return self.field.is_real

    def lowpass(self, offset):
        """Stack whose row ``j`` holds ``S_{j+offset} u`` (rows indexed from block -1)."""
        if self._cum is None:
            self._cum = np.cumsum(self.stack, axis=0)
        out = np.zeros_like(self.stack)
        nb = self.stack.shape[0]
        for row in range(nb):
            src = row + offset
            if src >= 0:
                out[row] = self._cum[min(src, nb - 1)]
        return out

    def neighbours(self):
        """Row ``j`` holds ``Delta_{j-1} + Delta_j + Delta_{j+1}``."""
        s = self.stack.copy()
        s[1:] += self.stack[:-1]
        s[:-1] += self.stack[1:]
        return s


def _blocks(part, u):
    if isinstance(u, PaddedBlocks):
        if u.part is not part and u.part.grid != part.grid:
            raise ValueError("padded blocks were built on a different grid")
        return u
    if not isinstance(u, SpectralField):
        raise TypeError(f"expected SpectralField or PaddedBlocks, got {type(u).__name__}")
    return PaddedBlocks(part, u)


def _project(part, values, real):
    return from_padded_values(values, part.grid, real)


def para_lo(part, u, v):
    """``u < v = sum_j (S_{j-2} u) Delta_j v``."""
    bu, bv = _blocks(part, u), _blocks(part, v)
    return _project(part, _accel.stack_dot(bu.lowpass(-2), bv.stack), bu.is_real and bv.is_real)


def para_hi(part, u, v):
    """``u > v = v < u``."""
    return para_lo(part, v, u)


def para_res(part, u, v):
    """``u o v = sum_{|i-j| <= 1} Delta_i u Delta_j v``."""
    bu, bv = _blocks(part, u), _blocks(part, v)
    return _project(part, _accel.stack_dot(bu.stack, bv.neighbours()), bu.is_real and bv.is_real)


def _field(u):
    return u.field if isinstance(u, PaddedBlocks) else u


def commutator(part, u, v, h):
    """``C(u, v, h) = (u < v) o h - u (v o h)``."""
    lo = para_lo(part, u, v)
    return para_res(part, lo, h) - dealiased_product(_field(u), para_res(part, v, h))


def dform(part, u, v, h):
    """``D(u, v, h) = <u, h o v> - <u < v, h>``."""
    return inner(_field(u), para_res(part, h, v)) - inner(para_lo(part, u, v), _field(h))


# ------------------------------------------------------ time mollifier ----

def time_kernel(r):
    """Bump ``exp(-1/(1-r^2))`` on ``(-1, 1)``, unnormalised."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _kernel_scalar(r):
    return math.exp(-1.0 / (1.0 - r * r)) if abs(r) < 1.0 else 0.0


@lru_cache(maxsize=4096)
def half_kernel_tail(x):
    """``int_x^1 K(r) dr`` for the unnormalised bump, ``0 <= x <= 1``."""
    if x >= 1.0:
        return 0.0
    return integrate.quad(_kernel_scalar, x, 1.0, epsabs=1e-16, epsrel=1e-12, limit=200)[0]


class HistoryRing:
    """Fixed-spacing history of weighted snapshots ``eta(s) u(s)``.

    Snapshot ``n`` sits at time ``n * dt_hist``; the one at ``s = 0`` is
    kept for good because the mollifier clamps negative times onto it.
    """

    def __init__(self, grid, dt_hist, capacity, weight_label=""):
        if dt_hist <= 0:
            raise ValueError("history spacing must be positive")
        if capacity < 2:
            raise ValueError("history capacity must be at least 2")
        self.grid = grid
        self.dt_hist = float(dt_hist)
        self.capacity = int(capacity)
        self.weight_label = weight_label
        self._data = np.zeros((self.capacity,) + grid.shape, dtype=np.complex128)
        self._first = 0  # step index of the oldest stored snapshot
        self._count = 0
        self.origin = None

    @classmethod
    def for_support(cls, grid, dt_hist, support=1.0, weight_label=""):
        return cls(grid, dt_hist, int(math.ceil(support / dt_hist)) + 2, weight_label)

    def __len__(self):
        return self._count

    @property
    def last_index(self):
        return self._first + self._count - 1

    def time_of(self, n):
        return n * self.dt_hist

    @property
    def times(self):
        return np.arange(self._first, self._first + self._count) * self.dt_hist

    def _index_for(self, t):
        n = int(round(t / self.dt_hist))
        if abs(t - n * self.dt_hist) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the history lattice of spacing {self.dt_hist}")
        return n

    def push(self, t, weighted):
        if weighted.grid != self.grid:
            raise ValueError("snapshot grid does not match the history ring")
        n = self._index_for(t)
        if self._count == 0:
            if n != 0:
                raise ValueError("history must start with the snapshot at t = 0")
            self.origin = weighted.coeffs.copy()
        elif n != self.last_index + 1:
            raise ValueError(f"history gap: got step {n} after step {self.last_index}")
        if self._count == self.capacity:
            self._first += 1
            self._count -= 1
        self._data[(self._first + self._count) % self.capacity] = weighted.coeffs
        self._count += 1

    def snapshot(self, n):
        if n < 0:
            return self.origin
        if not self._first <= n <= self.last_index:
            raise KeyError(n)
        return self._data[n % self.capacity]

    def window(self, lo, hi):
        """Stored step indices ``n`` with ``lo <= n <= hi`` (``lo`` clamped at 0)."""
        lo = max(lo, 0)
        if lo < self._first:
            raise ValueError(
                f"insufficient history: need snapshots from t={lo * self.dt_hist:.6g}, "
                f"oldest kept is t={self._first * self.dt_hist:.6g} "
                f"(capacity {self.capacity} x {self.dt_hist:.3g})"
            )
        return list(range(lo, min(hi, self.last_index) + 1))

    def state(self):
        """Arrays that reproduce the ring exactly (for checkpoints)."""
        order = [(self._first + i) % self.capacity for i in range(self._count)]
        return {
            "dt_hist": self.dt_hist,
            "capacity": self.capacity,
            "first": self._first,
            "data": self._data[order].copy(),
            "origin": self.origin if self.origin is not None else np.zeros(self.grid.shape, complex),
        }

    @classmethod
    def from_state(cls, grid, state, weight_label=""):
        ring = cls(grid, float(state["dt_hist"]), int(state["capacity"]), weight_label)
        data = np.asarray(state["data"])
        ring._first = int(state["first"])
        ring._count = data.shape[0]
        for i in range(ring._count):
            ring._data[(ring._first + i) % ring.capacity] = data[i]
        ring.origin = np.asarray(state["origin"]).copy()
        return ring


def mollifier_weights(hist, t, scale, causal=True):
    """Quadrature nodes and weights for ``Q`` at time ``t`` and time scale ``scale``.

    Returns ``(indices, weights)`` with weights summing to one. Nodes
    before ``s = 0`` are represented by the origin snapshot.
    """
    dt = hist.dt_hist
    n_t = hist._index_for(t)
    if n_t > hist.last_index:
        raise ValueError(f"history ends at t={hist.time_of(hist.last_index):.6g}, asked for t={t:.6g}")
    span = int(math.floor(scale / dt + 1e-12))
    if span < 1:
        # kernel narrower than one history step: nearest snapshot
        hist.window(n_t, n_t)
        return [n_t], np.ones(1)
    hi = n_t if causal else n_t + span
    if not causal and hi > hist.last_index:
        raise ValueError(
            f"insufficient history: two-sided mollifier needs t={hist.time_of(hi):.6g}, "
            f"history ends at t={hist.time_of(hist.last_index):.6g}"
        )
    idx = hist.window(n_t - span, hi)
    s = np.array([hist.time_of(n) for n in idx])
    r = (t - s) / scale
    k = time_kernel(r)
    # trapezoid cell widths on the (uniform) node set
    widths = np.full(len(idx), dt)
    widths[0] *= 0.5
    widths[-1] *= 0.5
    w = k * widths
    if n_t - span < 0:
        # s in [t - scale, 0) clamps to the origin snapshot
        w[0] += scale * half_kernel_tail(min(t / scale, 1.0))
    total = w.sum()
    if total <= 0.0:
        j = int(np.argmin(np.abs(r)))
        return [idx[j]], np.ones(1)
    return idx, w / total


def mollified(hist, t, scale, causal=True, mask=None):
    """``Q u(t)`` coefficients (optionally only on ``mask``)."""
    idx, w = mollifier_weights(hist, t, scale, causal)
    snaps = np.stack([hist.snapshot(n) for n in idx])
    if mask is not None:
        return w @ snaps[:, mask]
    return np.tensordot(w, snaps, axes=(0, 0))


def modified_para(part, hist, v, t, causal=True):
    """``u << v = sum_i (S_{i-1} Q_i u) Delta_i v`` at time ``t``.

    ``hist`` holds the weighted snapshots of ``u``; block ``i`` is
    mollified over the time scale ``2^(-2i)``.
    """
    if hist.grid != part.grid:
        raise ValueError("history ring and partition live on different grids")
    bv = _blocks(part, v)
    n = part.grid.n
    low = np.zeros((part.nblocks, n, n), dtype=np.complex128)
    for i in range(0, part.jmax + 1):
        symbol = part.lowpass(i - 1)
        mask = symbol != 0.0
        q = mollified(hist, t, 2.0 ** (-2 * i), causal, mask)
        row = low[i + 1]
        row[mask] = symbol[mask] * q
    m = bv.m
    stack = sfft.ifft2(pad_coeffs(low, m), axes=(-2, -1)) * (m * m)
    real = bv.is_real
    stack = stack.real if real else stack
    return _project(part, _accel.stack_dot(np.ascontiguousarray(stack), bv.stack), real)
