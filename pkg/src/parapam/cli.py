"""Batch experiment driver.

A plan is an INI file (or a manifest written by an earlier run). The
``[experiment]`` section picks the kind; ``[solver]``, ``[nonlinearity]``,
``[noise]``, ``[initial]`` and ``[monitor]`` fill the base configuration;
``[sweep]`` lists comma-separated values for ``eps``, ``seeds``, ``dt``
and ``n``. Every sweep point becomes one task; results are collected in
sweep order into ``report.csv`` with columns
``time, metric, value, <sweep keys>``.
"""
import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .besov import build_partition
from .calibration import load_constants, run_calibration, write_constants
from .solver import (
    Solver,
    SolverConfig,
    checkpoint_header,
    enhanced_noise_for,
    fit_growth_rate,
    uniqueness_diagnostic,
)
from .spectral import TorusGrid, random_field

log = logging.getLogger("parapam")

KINDS = ("convergence", "norm_tracking", "renorm_necessity", "uniqueness", "calibrate")
SWEEP_AXES = ("eps", "seeds", "dt", "n")
SWEEP_KEYS = ("seed", "n", "dt", "eps")


class PlanError(ValueError):
    """Invalid experiment plan."""


# ------------------------------------------------------------------ plan --

_SOLVER_KEYS = {
    "n": int, "mu": float, "alpha": float, "kappa": float, "dt": float, "T": float, "mode": str,
    "scheme": str, "renormalize": "bool", "renorm_lattice": str, "convention": str,
    "gamma_loc": float, "hist_dt": float, "causal": "bool", "verbatim": "bool",
    "max_substeps": int, "blowup": float,
}
_INITIAL_KEYS = {"kind": str, "value": float, "seed": int, "delta0": float, "amplitude": float, "path": str}


@dataclasses.dataclass
class ExperimentPlan:
    kind: str
    base: dict
    sweep: dict
    seed: int = 0
    name: str = "plan"
    svg: bool = False
    checkpoint_every: int = 0
    perturbation: float = 1e-6
    snapshot_every: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise PlanError(f"unknown sweep axis {axis!r}; allowed: {SWEEP_AXES}")
            if not values:
                raise PlanError(f"sweep axis {axis!r} is empty")
        SolverConfig.from_dict(self.base)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def points(self, seed_offset=0):
        """Sweep points in a fixed order: seeds, then n, dt, eps."""
        seeds = [s + seed_offset for s in self.sweep.get("seeds", [self.seed])]
        ns = self.sweep.get("n", [self.base["n"]])
        dts = self.sweep.get("dt", [self.base["dt"]])
        epss = self.sweep.get("eps", [self.base["eps"]])
        if self.kind in ("convergence", "renorm_necessity"):
            # the eps list is consumed inside one task
            return [{"seed": s, "n": n, "dt": dt, "eps": tuple(epss)}
                    for s, n, dt in itertools.product(seeds, ns, dts)]
        return [{"seed": s, "n": n, "dt": dt, "eps": e} for s, n, dt, e in itertools.product(seeds, ns, dts, epss)]


def _convert(kind, raw, key):
    try:
        if kind == "bool":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except ValueError as exc:
        raise PlanError(f"bad value {raw!r} for {key}: {exc}") from None


def _floats(raw, key, cast=float):
    items = [x.strip() for x in raw.split(",") if x.strip()]
    return [_convert(cast, x, key) for x in items]


def parse_ini(text):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    if "experiment" not in cp:
        raise PlanError("plan needs an [experiment] section")
    ex = cp["experiment"]
    base = SolverConfig().to_dict()
    if "solver" in cp:
        for key, raw in cp["solver"].items():
            if key not in _SOLVER_KEYS:
                raise PlanError(f"unknown [solver] key {key!r}")
            base[key] = _convert(_SOLVER_KEYS[key], raw, key)
    if "nonlinearity" in cp:
        base["nonlinearity"] = cp["nonlinearity"].get("name", base["nonlinearity"]).strip()
    if "noise" in cp:
        nz = cp["noise"]
        for key, cast in (("eps", float), ("profile", str), ("sigma", float)):
            if key in nz:
                base[key] = _convert(cast, nz[key], key)
    if "initial" in cp:
        init = dict(base["initial"])
        for key, raw in cp["initial"].items():
            if key not in _INITIAL_KEYS:
                raise PlanError(f"unknown [initial] key {key!r}")
            init[key] = _convert(_INITIAL_KEYS[key], raw, key)
        base["initial"] = init
    if "monitor" in cp and "every" in cp["monitor"]:
        base["monitor_every"] = _convert(int, cp["monitor"]["every"], "monitor.every")
    sweep = {}
    if "sweep" in cp:
        for key, raw in cp["sweep"].items():
            cast = int if key in ("seeds", "n") else float
            sweep[key] = _floats(raw, key, cast)
    seed = int(cp["noise"].get("seed", "0")) if "noise" in cp else 0
    return ExperimentPlan(
        kind=ex.get("kind", "").strip(),
        base=base,
        sweep=sweep,
        seed=seed,
        name=ex.get("name", "plan").strip(),
        svg=_convert("bool", ex.get("svg", "false"), "svg"),
        checkpoint_every=_convert(int, ex.get("checkpoint_every", "0"), "checkpoint_every"),
        perturbation=_convert(float, ex.get("perturbation", "1e-6"), "perturbation"),
        snapshot_every=_convert(int, ex.get("snapshot_every", "5"), "snapshot_every"),
    )


def load_plan(path):
    """Read an INI plan or a manifest; returns ``(plan, seed_offset or None)``."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if "plan" not in data:
            raise PlanError(f"{path} is not a run manifest (no 'plan' key)")
        return ExperimentPlan(**data["plan"]), data.get("seed_offset")
    return parse_ini(text), None


# ----------------------------------------------------------- experiments --

def _config(plan, point, **over):
    d = dict(plan.base)
    d.update(n=point["n"], dt=point["dt"])
    if not isinstance(point["eps"], tuple):
        d["eps"] = point["eps"]
    init = dict(d["initial"])
    if init.get("kind") == "rough":
        init["seed"] = init.get("seed", 0) + point["seed"]
    d["initial"] = init
    d.update(over)
    return SolverConfig.from_dict(d)


def _final_runs(plan, point, renormalize):
    part = build_partition(TorusGrid(point["n"]))
    finals = []
    for eps in point["eps"]:
        cfg = _config(plan, point, eps=eps, renormalize=renormalize, mode="direct")
        en = enhanced_noise_for(cfg, point["seed"], part)
        state, _ = Solver(cfg, en, part).run()
        finals.append((eps, state))
    return finals


def exp_convergence(plan, point, ctx):
    rows = []
    finals = _final_runs(plan, point, True)
    for eps, st in finals:
        rows.append((st.t, "u_linf", st.solution.linf(), dict(point, eps=eps)))
    for (e1, s1), (e2, s2) in zip(finals, finals[1:]):
        rows.append((s2.t, "cauchy_linf", (s1.solution - s2.solution).linf(), dict(point, eps=e2)))
    return rows


def exp_renorm_necessity(plan, point, ctx):
    rows = exp_convergence(plan, point, ctx)
    bare = _final_runs(plan, point, False)
    for eps, st in bare:
        rows.append((st.t, "u_linf_bare", st.solution.linf(), dict(point, eps=eps)))
    for (e1, s1), (e2, s2) in zip(bare, bare[1:]):
        rows.append((s2.t, "growth_bare", s2.solution.linf() / s1.solution.linf(), dict(point, eps=e2)))
    return rows


def exp_norm_tracking(plan, point, ctx):
    cfg = _config(plan, point)
    part = build_partition(TorusGrid(cfg.n))
    en = enhanced_noise_for(cfg, point["seed"], part)
    solver = Solver(cfg, en, part)
    state = None
    resume = ctx.get("resume")
    if resume:
        state = solver.load_checkpoint(resume, noise_seed=en.seed)
        if state.n > cfg.steps:
            raise ValueError(f"checkpoint at t={state.t} lies beyond T={cfg.T}")
        log.info("resumed point %s from %s at t=%s", point, resume, state.t)
    else:
        state = solver.initial_state()
    ckdir = ctx.get("checkpoint_dir")
    every = plan.checkpoint_every
    remaining = cfg.steps - state.n
    while remaining > 0:
        chunk = min(remaining, every) if every else remaining
        solver.run(state, steps=chunk)
        remaining -= chunk
        if every and ckdir:
            solver.save_checkpoint(state, os.path.join(ckdir, f"point_{ctx['index']:04d}.npz"), noise_seed=en.seed)
    rows = []
    rep = state.report
    for name in sorted(rep.entries):
        for t, v in zip(rep.times, rep.entries[name]):
            if not math.isnan(v):
                rows.append((t, name, v, point))
    return rows


def exp_uniqueness(plan, point, ctx):
    cfg = _config(plan, point, mode="direct")
    part = build_partition(TorusGrid(cfg.n))
    en = enhanced_noise_for(cfg, point["seed"], part)
    solver = Solver(cfg, en, part)
    u0 = cfg.initial.build(part.grid)
    bump = random_field(part.grid, np.random.default_rng([point["seed"], 14]), decay=1.0)
    runs = []
    for start in (u0, u0 + bump * plan.perturbation):
        _, snaps = solver.run(solver.initial_state(start), snapshot_every=plan.snapshot_every)
        runs.append(snaps)
    rate = ctx.get("constants", {}).get("uniqueness", {}).get("rate")
    rep = uniqueness_diagnostic(runs[0], runs[1], en, part, cfg.alpha, cfg.mu, cfg.f, rate=rate,
                                c_used=solver.c_used)
    rows = []
    for name in sorted(rep.entries):
        for t, v in zip(rep.times, rep.entries[name]):
            if not math.isnan(v):
                rows.append((t, name, v, point))
    rows.append((rep.times[-1], "growth_rate", max(fit_growth_rate(rep), 0.0), point))
    return rows


EXPERIMENTS = {
    "convergence": exp_convergence,
    "renorm_necessity": exp_renorm_necessity,
    "norm_tracking": exp_norm_tracking,
    "uniqueness": exp_uniqueness,
}


def _task(args):
    kind, plan_dict, point, ctx = args
    plan = ExperimentPlan(**plan_dict)
    try:
        return EXPERIMENTS[kind](plan, point, ctx), None
    except Exception as exc:  # reported per sweep point, other points continue
        return [], f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------- output --

def _resume_target(plan, points, path):
    """Index of the sweep point whose configuration and noise seed match the checkpoint."""
    if plan.kind != "norm_tracking":
        raise PlanError("--resume applies to norm_tracking plans only")
    try:
        header = checkpoint_header(path)
    except (OSError, ValueError, KeyError) as exc:
        raise PlanError(f"cannot read checkpoint {path}: {exc}") from None
    for i, point in enumerate(points):
        cfg = _config(plan, point)
        if header.get("cfg_hash") == cfg.dynamics_digest() and header.get("noise_seed") == point["seed"]:
            return i
    raise PlanError(f"checkpoint {path} matches no sweep point of this plan")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, tuple):
        return ";".join(_fmt(v) for v in x)
    return str(x)


def write_csv(rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("time", "metric", "value") + SWEEP_KEYS)
    for t, metric, value, point in rows:
        w.writerow([_fmt(float(t)), metric, _fmt(float(value))] + [_fmt(point[k]) for k in SWEEP_KEYS])
    Path(path).write_text(buf.getvalue())


def write_svg(rows, path, title):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "parapam"
    series = {}
    for t, metric, value, point in rows:
        key = (metric,) + tuple(_fmt(point[k]) for k in SWEEP_KEYS)
        series.setdefault(key, []).append((t, value))
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in sorted(series):
        pts = sorted(series[key])
        if len(pts) > 1:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=1, label=" ".join(key))
    ax.set_xlabel("time")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_title(title)
    if len(series) <= 12:
        ax.legend(fontsize=6)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_plan(plan, out, workers=1, seed_offset=0, resume=None):
    """Execute ``plan`` into directory ``out``; returns the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PlanError(f"output directory {out} is not writable")
    try:
        constants = load_constants()
    except (FileNotFoundError, json.JSONDecodeError):
        constants = {}
    failures = []
    outputs = {}
    if plan.kind == "calibrate":
        seeds = plan.sweep.get("seeds")
        n = len(seeds) if seeds else 50
        constants = run_calibration(n_ineq=n, workers=workers, log=log.info, offset=seed_offset)
        write_constants(constants, out / "constants.json")
        rows = []
        for name, entry in sorted(constants["inequalities"].items()):
            rows.append((0.0, f"c_{name}", entry["c"], {"seed": seed_offset, "n": 64, "dt": 0.0, "eps": 0.0}))
        write_csv(rows, out / "report.csv")
        outputs["constants.json"] = _sha256(out / "constants.json")
    else:
        ckdir = None
        if plan.checkpoint_every:
            ckdir = out / "checkpoints"
            ckdir.mkdir(exist_ok=True)
        points = plan.points(seed_offset)
        base_ctx = {"constants": constants, "checkpoint_dir": str(ckdir) if ckdir else None}
        tasks = [(plan.kind, plan.to_dict(), p, dict(base_ctx, index=i)) for i, p in enumerate(points)]
        if resume is not None:
            target = _resume_target(plan, points, resume)
            tasks[target][3]["resume"] = str(resume)
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_task, tasks))
        else:
            results = [_task(t) for t in tasks]
        rows = []
        for point, (part_rows, err) in zip(points, results):
            rows.extend(part_rows)
            if err:
                failures.append({"point": {k: _fmt(v) for k, v in point.items()}, "error": err})
                log.error("sweep point %s failed: %s", point, err)
        write_csv(rows, out / "report.csv")
        if plan.svg and rows:
            write_svg(rows, out / "report.svg", f"{plan.name} ({plan.kind})")
            outputs["report.svg"] = _sha256(out / "report.svg")
    outputs["report.csv"] = _sha256(out / "report.csv")
    manifest = {
        "tool": "parapam",
        "version": __version__,
        "plan": plan.to_dict(),
        "plan_hash": plan.digest(),
        "seed_offset": seed_offset,
        "seeds": [p["seed"] for p in plan.points(seed_offset)] if plan.kind != "calibrate" else None,
        "constants": constants,
        "outputs": outputs,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 1 if failures else 0


# ------------------------------------------------------------------ main --

def build_parser():
    p = argparse.ArgumentParser(prog="parapam", description="Run a parabolic Anderson model experiment plan.")
    p.add_argument("--plan", required=True, help="INI plan or manifest.json of an earlier run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweep points")
    p.add_argument("--seed-offset", type=int, default=None, help="added to every seed of the sweep")
    p.add_argument("--resume", default=None, help="checkpoint to resume the matching sweep point from")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        plan, manifest_offset = load_plan(args.plan)
    except (PlanError, configparser.Error, OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    offset = args.seed_offset if args.seed_offset is not None else (manifest_offset or 0)
    try:
        return run_plan(plan, args.out, args.workers, offset, args.resume)
    except PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
