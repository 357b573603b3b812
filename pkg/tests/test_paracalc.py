import math

import numpy as np
import pytest
from scipy import integrate

from parapam.besov import build_partition
from parapam.paracalc import (
    HistoryRing,
    PaddedBlocks,
    commutator,
    dform,
    half_kernel_tail,
    modified_para,
    mollified,
    mollifier_weights,
    para_hi,
    para_lo,
    para_res,
    time_kernel,
)
from parapam.spectral import SpectralField, TorusGrid, constant, dealiased_product, zeros

from conftest import conv_oracle, rand


def blocks(part, u):
    return [part.rho(j) * u.coeffs for j in part.indices]


def lo_oracle(part, u, v):
    bu, bv = blocks(part, u), blocks(part, v)
    out = np.zeros_like(u.coeffs)
    for j in range(part.nblocks):
        s = sum((bu[i] for i in range(0, j - 1)), np.zeros_like(out))
        out += conv_oracle(s, bv[j])
    return out


def res_oracle(part, u, v):
    bu, bv = blocks(part, u), blocks(part, v)
    out = np.zeros_like(u.coeffs)
    for i in range(part.nblocks):
        for j in range(part.nblocks):
            if abs(i - j) <= 1:
                out += conv_oracle(bu[i], bv[j])
    return out


def F(part, c):
    return SpectralField(part.grid, c)


def test_conv_oracle_matches_brute_loop(part16, rng):
    from test_spectral import _brute_convolution

    k1, k2 = part16.grid.wavenumbers()
    mask = (np.abs(k1) <= 4) & (np.abs(k2) <= 4)
    a = np.where(mask, rand(part16.grid, rng).coeffs, 0)
    b = np.where(mask, rand(part16.grid, rng).coeffs, 0)
    np.testing.assert_allclose(conv_oracle(a, b), _brute_convolution(a, b), atol=1e-14)


def test_paraproducts_against_block_oracle(part16, rng):
    u, v = rand(part16.grid, rng), rand(part16.grid, rng)
    np.testing.assert_allclose(para_lo(part16, u, v).coeffs, lo_oracle(part16, u, v), atol=1e-13)
    np.testing.assert_allclose(para_res(part16, u, v).coeffs, res_oracle(part16, u, v), atol=1e-13)
    np.testing.assert_allclose(para_hi(part16, u, v).coeffs, lo_oracle(part16, v, u), atol=1e-13)


def test_bony_identity(part64, rng):
    u, v = rand(part64.grid, rng, 0.5), rand(part64.grid, rng, 0.5)
    total = para_lo(part64, u, v) + para_res(part64, u, v) + para_hi(part64, u, v)
    np.testing.assert_allclose(total.coeffs, dealiased_product(u, v).coeffs, atol=1e-12)


def test_constant_cases(part32, rng):
    g = part32.grid
    v = rand(g, rng)
    c = constant(g, 1.7)
    assert para_lo(part32, v, c).linf() < 1e-14
    expect = 1.7 * (v.coeffs * (1 - part32.chi - part32.rho(0)))
    np.testing.assert_allclose(para_lo(part32, c, v).coeffs, expect, atol=1e-14)
    np.testing.assert_allclose(para_hi(part32, v, c).coeffs, expect, atol=1e-14)
    assert para_hi(part32, c, v).linf() < 1e-14
    assert para_res(part32, c, constant(g, -2.0)).coeffs[0, 0] == pytest.approx(-3.4)


def test_resonant_of_separated_modes_vanishes(part64):
    g = part64.grid
    a = np.zeros(g.shape, complex)
    b = np.zeros(g.shape, complex)
    # |k| ~ 2^5 against |k| = 6: blocks {5, 6} and {2, 3}
    a[24, 24] = a[-24, -24] = 0.5
    b[6, 0] = b[-6, 0] = 0.5
    assert para_res(part64, SpectralField(g, a), SpectralField(g, b)).linf() < 1e-15


def test_commutator_and_dform_against_oracle(part16, rng):
    g = part16.grid
    u, v, h = rand(g, rng, 2), rand(g, rng, 1), rand(g, rng, 0.5)
    c_expect = res_oracle(part16, F(part16, lo_oracle(part16, u, v)), h) - conv_oracle(u.coeffs, res_oracle(part16, v, h))
    np.testing.assert_allclose(commutator(part16, u, v, h).coeffs, c_expect, atol=1e-13)
    d_expect = np.real(np.vdot(res_oracle(part16, h, v), u.coeffs)) - np.real(np.vdot(h.coeffs, lo_oracle(part16, u, v)))
    assert dform(part16, u, v, h) == pytest.approx(d_expect, abs=1e-13)
    # constant first argument
    c = constant(g, 2.0)
    cc = res_oracle(part16, F(part16, lo_oracle(part16, c, v)), h) - 2.0 * res_oracle(part16, v, h)
    np.testing.assert_allclose(commutator(part16, c, v, h).coeffs, cc, atol=1e-13)
    # constant second argument of D
    cv = constant(g, -0.5)
    dv = np.real(np.vdot(res_oracle(part16, h, cv), u.coeffs)) - np.real(np.vdot(h.coeffs, lo_oracle(part16, u, cv)))
    assert dform(part16, u, cv, h) == pytest.approx(dv, abs=1e-13)


def test_zero_first_argument(part32, rng):
    z = zeros(part32.grid)
    v, h = rand(part32.grid, rng), rand(part32.grid, rng)
    assert commutator(part32, z, v, h).linf() == 0.0
    assert dform(part32, z, v, h) == 0.0


def test_padded_blocks_reuse(part32, rng):
    u, v = rand(part32.grid, rng), rand(part32.grid, rng)
    bv = PaddedBlocks(part32, v)
    np.testing.assert_array_equal(para_lo(part32, u, bv).coeffs, para_lo(part32, u, v).coeffs)
    with pytest.raises(TypeError):
        para_lo(part32, u, v.coeffs)
    other = build_partition(TorusGrid(16))
    with pytest.raises(ValueError):
        para_lo(other, rand(other.grid, rng), bv)


# ------------------------------------------------------------ history ----

def filled_ring(grid, w, dt_hist, t_end, fn, capacity=None):
    n_end = int(round(t_end / dt_hist))
    ring = HistoryRing(grid, dt_hist, capacity or n_end + 2)
    for n in range(n_end + 1):
        ring.push(n * dt_hist, w * fn(n * dt_hist))
    return ring


def test_history_ring_rules(part16, rng):
    g = part16.grid
    w = rand(g, rng)
    ring = HistoryRing(g, 0.1, 3)
    with pytest.raises(ValueError):
        ring.push(0.1, w)
    ring.push(0.0, w)
    with pytest.raises(ValueError):
        ring.push(0.2, w)
    with pytest.raises(ValueError):
        ring.push(0.15, w)
    for n in range(1, 6):
        ring.push(0.1 * n, w * n)
    assert len(ring) == 3 and ring.last_index == 5
    np.testing.assert_array_equal(ring.snapshot(-1), w.coeffs)
    with pytest.raises(ValueError, match="insufficient history"):
        ring.window(1, 5)
    back = HistoryRing.from_state(g, ring.state())
    for n in (3, 4, 5):
        np.testing.assert_array_equal(back.snapshot(n), ring.snapshot(n))
    with pytest.raises(ValueError):
        HistoryRing(g, 0.0, 3)


def test_mollifier_weights_basic(part16, rng):
    ring = filled_ring(part16.grid, rand(part16.grid, rng), 0.01, 1.0, lambda s: 1.0)
    idx, w = mollifier_weights(ring, 0.0, 0.5)
    assert list(idx) == [0] and w[0] == pytest.approx(1.0)
    idx, w = mollifier_weights(ring, 0.5, 0.25)
    assert w.sum() == pytest.approx(1.0) and np.all(w >= 0) and idx[-1] == 50
    idx, w = mollifier_weights(ring, 0.5, 0.001)
    assert list(idx) == [50]


def test_half_kernel_tail_matches_quad():
    for x in (0.0, 0.3, 0.9):
        ref = integrate.quad(lambda r: math.exp(-1 / (1 - r * r)), x, 1.0, epsabs=1e-15)[0]
        assert half_kernel_tail(x) == pytest.approx(ref, rel=1e-10, abs=1e-16)
    assert time_kernel(np.array([1.0, -1.0, 2.0])).max() == 0.0


def test_q5_mean_lag_against_quad(part16, rng):
    """``u(s) = s w``: the causal mollifier returns ``(t - lag) w`` with the kernel's mean lag."""
    g = part16.grid
    w = rand(g, rng)
    scale = 2.0 ** -10
    dt_hist = 2.0 ** -17
    t = 1.0
    ring = HistoryRing(g, dt_hist, 2 ** 8)
    n0 = int(round((t - 2 * scale) / dt_hist))
    # the ring only needs the last 2 scale lengths; fill from an offset start
    ring._first = n0
    ring.origin = np.zeros(g.shape, complex)
    for n in range(n0, int(round(t / dt_hist)) + 1):
        ring._data[n % ring.capacity] = (w * (n * dt_hist)).coeffs
        ring._count = min(ring._count + 1, ring.capacity)
        ring._first = max(n0, n - ring.capacity + 1)
    num = integrate.quad(lambda r: r * math.exp(-1 / (1 - r * r)), 0, 1, epsabs=1e-15)[0]
    den = integrate.quad(lambda r: math.exp(-1 / (1 - r * r)), 0, 1, epsabs=1e-15)[0]
    exact = (t - scale * num / den) * w.coeffs
    got = mollified(ring, t, scale)
    np.testing.assert_allclose(got, exact, atol=1e-7 * np.abs(w.coeffs).max())
    assert np.abs(got - t * w.coeffs).max() > 1e-5 * np.abs(w.coeffs).max()


def test_modified_para_time_constant(part16, rng):
    g = part16.grid
    u, v = rand(g, rng), rand(g, rng)
    ring = filled_ring(g, u, 0.05, 1.0, lambda s: 1.0)
    got = modified_para(part16, ring, v, 1.0)
    bu, bv = blocks(part16, u), blocks(part16, v)
    expect = np.zeros(g.shape, complex)
    for i in range(1, part16.nblocks):
        s = sum((bu[m] for m in range(0, i)), np.zeros(g.shape, complex))
        expect += conv_oracle(s, bv[i])
    np.testing.assert_allclose(got.coeffs, expect, atol=1e-13)
    diff = got - para_lo(part16, u, v)
    assert diff.linf() > 1e-6
    assert modified_para(part16, ring, constant(g, 3.0), 1.0).linf() < 1e-14


def test_modified_para_two_sided_is_unbiased(part16, rng):
    g = part16.grid
    u, v = rand(g, rng), rand(g, rng)
    ring = filled_ring(g, u, 0.005, 2.0, lambda s: s)
    causal = modified_para(part16, ring, v, 1.0, causal=True)
    sym = modified_para(part16, ring, v, 1.0, causal=False)
    frozen = filled_ring(g, u, 0.005, 1.0, lambda s: 1.0)
    ref = modified_para(part16, frozen, v, 1.0)
    assert (sym - ref).linf() < 1e-10 * ref.linf()
    assert (causal - ref).linf() > 1e-4 * ref.linf()
    with pytest.raises(ValueError, match="insufficient history"):
        modified_para(part16, filled_ring(g, u, 0.005, 1.0, lambda s: s), v, 1.0, causal=False)
