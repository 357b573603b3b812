import json

import numpy as np
import pytest

from parapam import calibration as cal


def test_seed_sets_are_disjoint():
    for offset in (0, 17):
        a, b = set(cal.calibration_seeds(50, offset)), set(cal.validation_seeds(50, offset))
        assert len(a) == len(b) == 50 and not a & b


def test_probes_are_deterministic():
    for name in ("paraproduct", "commutator", "localizer_low", "theta_xi"):
        p = cal.PROBES[name]
        assert p.fn(1234) == p.fn(1234)
        assert p.fn(1234) > 0


def test_fit_and_check_semantics():
    probe = cal.Probe("const", lambda s: 1.0 + (s % 3) * 0.1)
    c = cal.fit_constant(probe, range(6))
    assert c == pytest.approx(1.2)
    assert cal.check_constant(probe, c, range(6))[0]
    assert not cal.check_constant(probe, 0.5, range(6))[0]


def test_bernstein_spread():
    table = {64: {2: 1.0, 3: 1.1}, 128: {2: 0.9, 3: 1.0}}
    assert cal.bernstein_spread(table) == pytest.approx(0.1 / 1.0)


def test_transient_growth():
    from parapam.besov import NormReport

    rep = NormReport()
    for t, v in ((1.0, 5.0), (2.0, 3.0), (3.0, 2.0), (4.0, 2.1)):
        rep.record(t, {"psi_weighted": v})
    assert cal.transient_growth(rep) == pytest.approx(2.1 / 3.0)


def test_frozen_constants_file_is_complete():
    const = cal.load_constants()
    assert const["version"] == 1 and const["margin"] == cal.MARGIN
    assert const["calibration_base"] == cal.CAL_BASE and const["validation_base"] == cal.VAL_BASE
    for name in cal.PROBES:
        entry = const["inequalities"][name]
        assert entry["c"] > 0 and entry["n_cal"] == 50
    for p in ("inf", "2"):
        assert abs(const["bernstein"][p]["spread"]) <= 0.2
    for d in cal.INTERP_DELTAS:
        assert const["interpolation_H"]["C"][str(d)] > 0
    assert const["cross_mode"]["tol"] > 0 and len(const["cross_mode"]["values"]) == cal.N_CROSS
    assert 0 < const["coercive"]["c"] < 1
    assert len(const["uniqueness"]["rates"]) == cal.N_UNIQ


def test_frozen_constant_reproduces():
    """One constant refitted from its calibration seeds equals the frozen value."""
    const = cal.load_constants()
    probe = cal.PROBES["localizer_high"]
    seeds = cal.calibration_seeds(const["inequalities"]["localizer_high"]["n_cal"])
    assert cal.fit_constant(probe, seeds) == pytest.approx(const["inequalities"]["localizer_high"]["c"], rel=1e-12)


def test_write_constants_roundtrip(tmp_path):
    path = tmp_path / "c.json"
    cal.write_constants({"b": 1.0, "a": [np.float64(2.0).item()]}, path)
    assert json.loads(path.read_text()) == {"a": [2.0], "b": 1.0}
    assert cal.load_constants(path)["b"] == 1.0
