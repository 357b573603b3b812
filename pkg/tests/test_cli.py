import csv
import json

import pytest

from parapam.cli import ExperimentPlan, PlanError, load_plan, main, parse_ini, run_plan

TINY = """
[experiment]
kind = norm_tracking
checkpoint_every = 5

[solver]
n = 16
dt = 0.01
T = 0.1
mode = split
hist_dt = 0.02

[noise]
eps = 0.2

[monitor]
every = 5

[sweep]
seeds = 1, 2
"""


def write(tmp_path, text, name="plan.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_parse_and_points():
    plan = parse_ini(TINY)
    assert plan.kind == "norm_tracking" and plan.base["n"] == 16 and plan.base["monitor_every"] == 5
    pts = plan.points(seed_offset=10)
    assert [p["seed"] for p in pts] == [11, 12]
    conv = parse_ini(TINY.replace("norm_tracking", "convergence") + "eps = 0.2, 0.1\n")
    assert conv.points()[0]["eps"] == (0.2, 0.1)


@pytest.mark.parametrize("bad, match", [
    ("[experiment]\nkind = convergence\n[sweep]\neps =\n", "empty"),
    ("[experiment]\nkind = nonsense\n", "kind"),
    ("[experiment]\nkind = convergence\n[solver]\nwarp = 9\n", "unknown"),
    ("[experiment]\nkind = convergence\n[sweep]\ntemperature = 1\n", "axis"),
    ("[solver]\nn = 16\n", "experiment"),
    ("[experiment]\nkind = convergence\n[solver]\nalpha = 0.2\n", "alpha"),
])
def test_invalid_plans_rejected(bad, match):
    with pytest.raises((PlanError, ValueError), match=match):
        parse_ini(bad)


def test_empty_sweep_rejected_before_compute(tmp_path, capsys):
    plan = write(tmp_path, "[experiment]\nkind = convergence\n[sweep]\nseeds =\n")
    out = tmp_path / "out"
    assert main(["--plan", str(plan), "--out", str(out)]) == 2
    assert not out.exists()
    assert "empty" in capsys.readouterr().err


def test_norm_tracking_outputs_and_rerun(tmp_path):
    plan = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--plan", str(plan), "--out", str(a)]) == 0
    rows = read_csv(a / "report.csv")
    assert rows[0] == ["time", "metric", "value", "seed", "n", "dt", "eps"]
    assert {r[3] for r in rows[1:]} == {"1", "2"}
    man = json.loads((a / "manifest.json").read_text())
    assert man["seeds"] == [1, 2] and man["failures"] == [] and "report.csv" in man["outputs"]
    assert not any(k in man for k in ("date", "timestamp", "created"))
    assert main(["--plan", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_workers_do_not_change_output(tmp_path):
    plan = write(tmp_path, TINY)
    assert main(["--plan", str(plan), "--out", str(tmp_path / "w1")]) == 0
    assert main(["--plan", str(plan), "--out", str(tmp_path / "w2"), "--workers", "2"]) == 0
    assert (tmp_path / "w1" / "report.csv").read_bytes() == (tmp_path / "w2" / "report.csv").read_bytes()


def test_seed_offset_shifts_seeds(tmp_path):
    plan = write(tmp_path, TINY)
    assert main(["--plan", str(plan), "--out", str(tmp_path / "o"), "--seed-offset", "100"]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seeds"] == [101, 102] and man["seed_offset"] == 100


def test_resume_matches_straight_run(tmp_path):
    short = write(tmp_path, TINY, "short.ini")
    long_ = write(tmp_path, TINY.replace("T = 0.1", "T = 0.2"), "long.ini")
    assert main(["--plan", str(short), "--out", str(tmp_path / "s")]) == 0
    assert main(["--plan", str(long_), "--out", str(tmp_path / "l")]) == 0
    ck = tmp_path / "s" / "checkpoints" / "point_0001.npz"
    assert main(["--plan", str(long_), "--out", str(tmp_path / "r"), "--resume", str(ck)]) == 0
    assert (tmp_path / "l" / "report.csv").read_bytes() == (tmp_path / "r" / "report.csv").read_bytes()
    other = write(tmp_path, TINY.replace("eps = 0.2", "eps = 0.1"), "other.ini")
    assert main(["--plan", str(other), "--out", str(tmp_path / "x"), "--resume", str(ck)]) == 2


def test_failing_point_is_reported(tmp_path):
    text = TINY.replace("mode = split", "mode = direct\nmax_substeps = 20").replace("T = 0.1", "T = 0.5")
    text = text.replace("seeds = 1, 2", "seeds = 1\ndt = 0.01, 0.5")
    plan = write(tmp_path, text)
    out = tmp_path / "f"
    assert main(["--plan", str(plan), "--out", str(out)]) == 1
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["failures"]) == 1 and man["failures"][0]["point"]["dt"] == "0.5"
    rows = read_csv(out / "report.csv")
    assert rows[1:] and all(r[5] == "0.01" for r in rows[1:])


def test_svg_is_deterministic(tmp_path):
    pytest.importorskip("matplotlib")
    plan = write(tmp_path, TINY.replace("checkpoint_every = 5", "svg = true"))
    for name in ("a", "b"):
        assert main(["--plan", str(plan), "--out", str(tmp_path / name)]) == 0
    svg = (tmp_path / "a" / "report.svg").read_bytes()
    assert svg.startswith(b"<?xml") and svg == (tmp_path / "b" / "report.svg").read_bytes()


def test_convergence_and_uniqueness_kinds(tmp_path):
    conv = """
[experiment]
kind = renorm_necessity
[solver]
n = 16
dt = 0.01
T = 0.1
[nonlinearity]
name = zero
[initial]
kind = constant
value = 1.0
[noise]
seed = 3
[sweep]
eps = 0.4, 0.2
"""
    assert run_plan(parse_ini(conv), tmp_path / "c") == 0
    metrics = {r[1] for r in read_csv(tmp_path / "c" / "report.csv")[1:]}
    assert metrics == {"u_linf", "cauchy_linf", "u_linf_bare", "growth_bare"}
    uniq = """
[experiment]
kind = uniqueness
[solver]
n = 16
dt = 0.01
T = 0.2
[noise]
eps = 0.2
[sweep]
seeds = 5
"""
    assert run_plan(parse_ini(uniq), tmp_path / "u") == 0
    metrics = {r[1] for r in read_csv(tmp_path / "u" / "report.csv")[1:]}
    assert {"zeta_H", "growth_rate"} <= metrics


def test_manifest_roundtrip_plan(tmp_path):
    plan = parse_ini(TINY)
    run_plan(plan, tmp_path / "m")
    back, offset = load_plan(tmp_path / "m" / "manifest.json")
    assert back == plan and offset == 0
    with pytest.raises(PlanError):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        load_plan(bad)
    assert isinstance(plan, ExperimentPlan)
