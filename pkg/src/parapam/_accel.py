"""Hot inner kernels, with a numba path and a pure-numpy fallback.

The backend is picked once at import from the ``PARAPAM_BACKEND``
environment variable (``numba`` or ``numpy``). When the variable is
unset, numba is used if it imports. Both paths compute the same
quantities; the benchmark in ``benchmarks/bench_kernels.py`` times them
against each other and the test-suite checks they agree.
"""
import math
import os

import numpy as np

_requested = os.environ.get("PARAPAM_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"PARAPAM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy --

def stack_dot_numpy(a, b):
    """Sum over the leading axis of the pointwise products ``a[j] * b[j]``."""
    return np.einsum("jxy,jxy->xy", a, b)


def block_sup_numpy(stack):
    """Per-block maximum modulus of a ``(nb, n, n)`` stack."""
    return np.abs(stack).reshape(stack.shape[0], -1).max(axis=1)


def weighted_history_sum_numpy(weights, history):
    """``out[i] = sum_n weights[i, n] * history[n]``."""
    return np.tensordot(weights, history, axes=(1, 0))


def horner_numpy(coeffs, x):
    """Evaluate ``sum_i coeffs[i] * x**i`` pointwise (coeffs in ascending order)."""
    out = np.full_like(x, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * x + c
    return out


def gaussian_lattice_sum_numpy(radius, a, mu, k2_scale):
    """``sum_{|k|_inf <= radius} exp(-2 a |k|^2) / (k2_scale |k|^2 + mu)``."""
    n = np.arange(-radius, radius + 1, dtype=np.float64)
    n2 = n * n
    gauss = np.exp(-2.0 * a * n2)
    total = 0.0
    # row by row keeps memory at O(radius) for large cutoffs
    for i in range(n.size):
        row = gauss[i] * gauss / (k2_scale * (n2[i] + n2) + mu)
        total += math.fsum(row)
    return total


# ---------------------------------------------------------------- numba --

if HAS_NUMBA:

    @njit(cache=True)
    def _stack_dot_nb(a, b):
        nb, nx, ny = a.shape
        out = np.zeros((nx, ny), dtype=a.dtype)
        for j in range(nb):
            for x in range(nx):
                for y in range(ny):
                    out[x, y] += a[j, x, y] * b[j, x, y]
        return out

    @njit(cache=True)
    def _block_sup_nb(stack):
        nb, nx, ny = stack.shape
        out = np.zeros(nb)
        for j in range(nb):
            m = 0.0
            for x in range(nx):
                for y in range(ny):
                    v = abs(stack[j, x, y])
                    if v > m:
                        m = v
            out[j] = m
        return out

    @njit(cache=True)
    def _weighted_history_sum_nb(weights, history):
        ni, nh = weights.shape
        _, nx, ny = history.shape
        out = np.zeros((ni, nx, ny), dtype=history.dtype)
        for i in range(ni):
            for n in range(nh):
                w = weights[i, n]
                if w == 0.0:
                    continue
                for x in range(nx):
                    for y in range(ny):
                        out[i, x, y] += w * history[n, x, y]
        return out

    @njit(cache=True)
    def _horner_nb(coeffs, x):
        flat = x.ravel()
        out = np.empty_like(flat)
        deg = coeffs.size - 1
        for p in range(flat.size):
            acc = coeffs[deg]
            v = flat[p]
            for i in range(deg - 1, -1, -1):
                acc = acc * v + coeffs[i]
            out[p] = acc
        return out.reshape(x.shape)

    @njit(cache=True)
    def _gaussian_lattice_sum_nb(radius, a, mu, k2_scale):
        # Neumaier compensated summation; terms are positive so the
        # result agrees with math.fsum to a few ulp.
        total = 0.0
        comp = 0.0
        for i in range(-radius, radius + 1):
            gi = math.exp(-2.0 * a * i * i)
            for j in range(-radius, radius + 1):
                k2 = i * i + j * j
                term = gi * math.exp(-2.0 * a * j * j) / (k2_scale * k2 + mu)
                t = total + term
                if abs(total) >= abs(term):
                    comp += (total - t) + term
                else:
                    comp += (term - t) + total
                total = t
        return total + comp

    def stack_dot(a, b):
        return _stack_dot_nb(np.ascontiguousarray(a), np.ascontiguousarray(b))

    def block_sup(stack):
        return _block_sup_nb(np.ascontiguousarray(stack))

    def weighted_history_sum(weights, history):
        return _weighted_history_sum_nb(
            np.ascontiguousarray(weights, dtype=np.float64),
            np.ascontiguousarray(history),
        )

    def horner(coeffs, x):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if np.iscomplexobj(x):
            return horner_numpy(coeffs, x)
        return _horner_nb(coeffs, np.ascontiguousarray(x, dtype=np.float64))

    def gaussian_lattice_sum(radius, a, mu, k2_scale):
        return _gaussian_lattice_sum_nb(int(radius), float(a), float(mu), float(k2_scale))

else:
    stack_dot = stack_dot_numpy
    block_sup = block_sup_numpy
    weighted_history_sum = weighted_history_sum_numpy
    horner = horner_numpy
    gaussian_lattice_sum = gaussian_lattice_sum_numpy
