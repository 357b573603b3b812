import math

import numpy as np
import pytest

from parapam.besov import (
    NormReport,
    NormSpec,
    TimeWeight,
    besov_norm,
    block_norms,
    build_partition,
    choose_localization_params,
    cutoff,
    jmax_for,
    localize,
    localizer_symbols,
    lp_block,
    lp_blocks,
    sobolev_inner,
    sobolev_norm,
    tau,
    weighted_norm_series,
)
from parapam.spectral import SpectralField, TorusGrid, constant, zeros

from conftest import rand


def test_cutoff_profile():
    assert cutoff(0.0) == 1.0
    assert cutoff(1.0) == 1.0
    assert cutoff(2.0) == 0.0
    r = np.linspace(1.0, 2.0, 101)
    assert np.all(np.diff(cutoff(r)) <= 0)


def test_jmax_covers_lattice_corners():
    for n in (16, 32, 64, 128):
        part = build_partition(TorusGrid(n))
        assert part.jmax == jmax_for(n)
        np.testing.assert_allclose(part.blocks.sum(axis=0), 1.0, atol=1e-14)
        # the corner mode |k| = sqrt(2) N/2 is inside the last block
        assert part.rho(part.jmax)[n // 2, n // 2] > 0
    assert jmax_for(64) == 6 and jmax_for(128) == 7


def test_partition_properties(part64):
    assert part64.chi[0, 0] == 1.0
    assert np.abs(part64.rho(0) * part64.rho(2)).max() == 0.0
    for i in part64.indices:
        for j in part64.indices:
            if abs(i - j) >= 2:
                assert not np.any(part64.rho(i) * part64.rho(j))


def test_golden_table_matches_fresh_computation():
    g = TorusGrid(64)
    a = build_partition(g)
    b = build_partition(g, golden=False)
    assert a.source == "golden" and b.source == "computed"
    np.testing.assert_allclose(a.blocks, b.blocks, atol=1e-15)


def test_constant_lives_in_lowest_block(part32):
    c = constant(part32.grid, 2.0)
    assert np.allclose(lp_block(part32, -1, c).coeffs, c.coeffs)
    for j in range(0, part32.jmax + 1):
        assert np.abs(lp_block(part32, j, c).coeffs).max() == 0.0
    for alpha in (-1.0, 0.3):
        for p in (2, np.inf):
            for q in (2, np.inf):
                # block -1 is weighted by 2^(-alpha)
                assert besov_norm(part32, c, alpha, p, q) == pytest.approx(2.0 * 2.0 ** (-alpha))


def test_single_mode_blocks():
    part = build_partition(TorusGrid(32))
    c = np.zeros((32, 32), complex)
    c[8, 0] = 1.0
    u = SpectralField(part.grid, c, False)
    nz = [j for j in part.indices if np.abs(lp_block(part, j, u).coeffs).max() > 0]
    assert nz and set(nz) <= {2, 3, 4} and len(nz) <= 2 and nz == list(range(nz[0], nz[-1] + 1))


def test_single_mode_norm_scaling():
    part = build_partition(TorusGrid(64))
    alpha = 0.7
    for j in range(2, part.jmax):
        c = np.zeros((64, 64), complex)
        k = int(round(1.5 * 2**j))
        c[k, 0] = c[-k, 0] = 0.5
        u = SpectralField(part.grid, c)
        ratio = besov_norm(part, u, alpha) / 2.0 ** (j * alpha)
        assert 0.5 <= ratio <= 2.0


def test_reconstruction_random(part64, rng):
    for _ in range(10):
        u = rand(part64.grid, rng, decay=0.0)
        np.testing.assert_allclose(lp_blocks(part64, u).sum(axis=0), u.coeffs, atol=1e-12)


def test_zero_norms(part32):
    z = zeros(part32.grid)
    assert besov_norm(part32, z, 0.5) == 0.0
    assert sobolev_norm(part32, z, -0.5) == 0.0


def test_block_norms_l2_matches_values(part32, rng):
    u = rand(part32.grid, rng)
    l2 = block_norms(part32, u, 2)
    for j in part32.indices:
        v = lp_block(part32, j, u).values()
        assert l2[j + 1] == pytest.approx(math.sqrt(np.mean(v**2)), rel=1e-12)
    with pytest.raises(ValueError):
        block_norms(part32, u, 3)


def test_sobolev_inner_is_the_norm(part32, rng):
    u = rand(part32.grid, rng)
    for s in (-0.5, 0.0, 0.8):
        assert sobolev_inner(part32, u, u, s) == pytest.approx(sobolev_norm(part32, u, s) ** 2, rel=1e-12)


def test_localizer_identities(part64, rng):
    u = rand(part64.grid, rng, decay=0.0)
    lo, hi = localize(part64, u, part64.jmax, 1.0)
    assert np.abs(hi.coeffs).max() == 0.0
    np.testing.assert_array_equal(lo.coeffs, u.coeffs)
    for n_loc, gamma in ((0, 1.0), (2.5, 0.5), (4, 2.0)):
        lo, hi = localize(part64, u, n_loc, gamma)
        np.testing.assert_allclose((lo + hi).coeffs, u.coeffs, atol=1e-14)
        a, b = localizer_symbols(part64, n_loc, gamma)
        np.testing.assert_allclose(a + b, 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        localize(part64, u, 2, 0.0)


def test_localization_levels():
    assert choose_localization_params(0.0, 0.1) == (0.0, 0.0)
    L, K = choose_localization_params(1.0, 0.1)
    assert L == pytest.approx(1 / 0.9) and K == pytest.approx(1 / 1.7)
    assert choose_localization_params(3.0, 0.1)[0] == pytest.approx(2 / 0.9)
    with pytest.raises(ValueError):
        choose_localization_params(1.0, 0.4)
    with pytest.raises(ValueError):
        choose_localization_params(-1.0, 0.1)


def test_weighted_series_examples(part16):
    g = part16.grid
    times = [0.1, 0.5, 1.0, 3.0]
    one = [(t, constant(g, 1.0)) for t in times]
    rep = weighted_norm_series(one, TimeWeight("tau_power", 1.0), NormSpec("linf"))
    np.testing.assert_allclose(rep.series("value"), tau(np.array(times)), rtol=1e-14)
    assert rep.meta["sup"] < 1.0
    inv = [(t, constant(g, 1.0 / float(tau(t)))) for t in times]
    rep = weighted_norm_series(inv, TimeWeight("tau_power", 1.0), NormSpec("linf"))
    np.testing.assert_allclose(rep.series("value"), 1.0, rtol=1e-13)


def test_time_weight_exponents():
    assert TimeWeight("rho_ansatz", k=4, alpha=0.8).exponent == pytest.approx(1 + 0.5 + 0.2)
    assert TimeWeight("unit")(2.0) == 1.0
    assert TimeWeight("tau_power", 0.5, theta=1.0).exponent == 1.0


def test_norm_report_validation():
    rep = NormReport()
    rep.record(0.0, {"a": 1.0})
    with pytest.raises(ValueError):
        rep.record(0.0, {"a": 1.0})
    with pytest.raises(ValueError):
        rep.record(1.0, {"a": -1.0})
    with pytest.raises(ValueError):
        rep.record(1.0, {"a": float("nan")})
    rep.record(1.0, {"b": 2.0})
    assert math.isnan(rep.entries["b"][0]) and math.isnan(rep.entries["a"][1])
