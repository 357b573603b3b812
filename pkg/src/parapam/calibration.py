"""Two-sided calibration of inequality constants and solver-level tolerances.

Every ``<~`` statement is turned into a probe that returns the ratio
``lhs / rhs`` for one random sample. A constant is fitted as the largest
ratio over the calibration seeds and then checked on a disjoint set of
validation seeds, where every ratio must stay below ``MARGIN`` times the
fitted constant. Frozen values live in ``data/constants.json``.
"""
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .besov import (
    besov_norm,
    block_norms,
    build_partition,
    holder_norm,
    localize,
    lp_block,
    sobolev_norm,
)
from .noise import sample_white_noise
from .paracalc import HistoryRing, commutator, dform, modified_para, para_lo, para_res
from .spectral import (
    SpectralField,
    TorusGrid,
    apply_multiplier,
    generator,
    gradient,
    heat,
    random_field,
    resolvent,
)
from .solver import (
    InitialData,
    Solver,
    SolverConfig,
    enhanced_noise_for,
    fit_growth_rate,
    uniqueness_diagnostic,
)

CAL_BASE = 1000
VAL_BASE = 2000
MARGIN = 2.0
CONSTANTS_FILE = "constants.json"


def calibration_seeds(n, offset=0):
    return list(range(CAL_BASE + offset, CAL_BASE + offset + n))


def validation_seeds(n, offset=0):
    return list(range(VAL_BASE + offset, VAL_BASE + offset + n))


def _rng(seed, tag):
    return np.random.default_rng([int(seed), int(tag)])


# --------------------------------------------------------------- probes ---

_PARTS = {}


def partition(n):
    if n not in _PARTS:
        _PARTS[n] = build_partition(TorusGrid(n))
    return _PARTS[n]


def _field(part, rng, lo, hi):
    """Random real field whose spectral decay exponent is drawn from ``[lo, hi]``."""
    return random_field(part.grid, rng, decay=rng.uniform(lo, hi), amplitude=rng.uniform(0.5, 2.0))


def probe_paraproduct(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 1)
    beta = -0.5
    u, v = _field(part, rng, 1.5, 3.0), _field(part, rng, 0.2, 1.0)
    return holder_norm(part, para_lo(part, u, v), beta) / (u.linf() * holder_norm(part, v, beta))


def probe_paraproduct_negative(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 2)
    alpha, beta = -0.3, 0.5
    u, v = _field(part, rng, 0.3, 1.2), _field(part, rng, 1.0, 2.5)
    lhs = holder_norm(part, para_lo(part, u, v), alpha + beta)
    return lhs / (holder_norm(part, u, alpha) * holder_norm(part, v, beta))


def probe_resonant(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 3)
    alpha, beta = 0.8, -0.5
    u, v = _field(part, rng, 2.0, 3.5), _field(part, rng, 0.2, 1.0)
    lhs = holder_norm(part, para_res(part, u, v), alpha + beta)
    return lhs / (holder_norm(part, u, alpha) * holder_norm(part, v, beta))


def probe_commutator(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 4)
    a, b, g = 0.8, 1.0, -1.2
    u, v, h = (_field(part, rng, 2.5, 3.5) for _ in range(3))
    lhs = holder_norm(part, commutator(part, u, v, h), a + b + g)
    return lhs / (holder_norm(part, u, a) * holder_norm(part, v, b) * holder_norm(part, h, g))


def probe_dform(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 5)
    a, b, g = 0.8, -0.3, -0.4
    u, v, h = _field(part, rng, 1.5, 3.0), _field(part, rng, 0.5, 1.5), _field(part, rng, 0.3, 1.2)
    lhs = abs(dform(part, u, v, h))
    return lhs / (sobolev_norm(part, u, a) * sobolev_norm(part, v, b) * holder_norm(part, h, g))


def probe_localizer_high(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 6)
    alpha, delta = 0.5, 0.25
    level = int(rng.integers(1, part.jmax - 1))
    f = _field(part, rng, -0.5, 0.5)
    _, hi = localize(part, f, level, 1.0)
    return holder_norm(part, hi, -alpha - delta) / (2.0 ** (-delta * level) * holder_norm(part, f, -alpha))


def probe_localizer_low(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 7)
    alpha, beta = 0.5, 0.5
    level = int(rng.integers(1, part.jmax - 1))
    f = _field(part, rng, -0.5, 0.5)
    lo, _ = localize(part, f, level, 1.0)
    return holder_norm(part, lo, -alpha + beta) / (2.0 ** (beta * level) * holder_norm(part, f, -alpha))


def probe_embedding(seed, n=64):
    part = partition(n)
    rng = _rng(seed, 8)
    alpha = 0.5
    u = _field(part, rng, 0.8, 2.5)
    return besov_norm(part, u, alpha - 1.0, np.inf, np.inf) / besov_norm(part, u, alpha, 2, 2)


def probe_interpolation(seed, n=64):
    """``||psi||_{C^a} <~ ||psi||_inf^(a/g) ||psi||_{C^g}^(1-a/g)`` at a fixed time."""
    part = partition(n)
    rng = _rng(seed, 9)
    a, g = 0.6, 1.5
    u = _field(part, rng, 1.5, 3.5)
    rhs = u.linf() ** (a / g) * holder_norm(part, u, g) ** (1.0 - a / g)
    return holder_norm(part, u, a) / rhs


def probe_schauder(seed, n=64, mu=1.0):
    part = partition(n)
    rng = _rng(seed, 10)
    alpha, beta = 0.5, 1.0
    t = float(10.0 ** rng.uniform(-3, 0))
    u0 = _field(part, rng, -0.5, 1.0)
    pt = apply_multiplier(heat(part.grid, t, mu), u0)
    return holder_norm(part, pt, alpha) / (math.exp(-mu * t) * t ** (-beta / 2) * holder_norm(part, u0, alpha - beta))


def probe_heat_commutator(seed, n=64, mu=1.0):
    """``L(u<v) - u<(Lv)`` with ``u`` following the heat flow, time derivative by a centred difference."""
    part = partition(n)
    rng = _rng(seed, 11)
    alpha, beta = 0.5, -0.5
    u0, v = _field(part, rng, 1.8, 3.0), _field(part, rng, 0.5, 1.2)
    t, h = 0.05, 1e-4
    grid = part.grid
    gen = generator(grid, mu)
    u = lambda s: apply_multiplier(heat(grid, s, mu), u0)  # noqa: E731
    dt_prod = (para_lo(part, u(t + h), v) - para_lo(part, u(t - h), v)) / (2 * h)
    lhs_field = dt_prod + apply_multiplier(gen, para_lo(part, u(t), v)) - para_lo(part, u(t), apply_multiplier(gen, v))
    lhs = sobolev_norm(part, lhs_field, alpha + beta - 2.0)
    return lhs / (sobolev_norm(part, u(t), alpha) * holder_norm(part, v, beta))


def probe_theta_xi(seed, n=64, mu=1.0, kappa=0.1):
    part = partition(n)
    xi = sample_white_noise(seed, part.grid).xi
    theta = apply_multiplier(resolvent(part.grid, mu), xi)
    return holder_norm(part, theta, 1.0 - kappa) / holder_norm(part, xi, -1.0 - kappa)


@dataclass(frozen=True)
class Probe:
    name: str
    fn: object
    n_cal: int = 50
    n_val: int = 50


PROBES = {
    p.name: p
    for p in (
        Probe("paraproduct", probe_paraproduct),
        Probe("paraproduct_negative", probe_paraproduct_negative),
        Probe("resonant", probe_resonant),
        Probe("commutator", probe_commutator),
        Probe("dform", probe_dform),
        Probe("localizer_high", probe_localizer_high),
        Probe("localizer_low", probe_localizer_low),
        Probe("embedding", probe_embedding),
        Probe("interpolation", probe_interpolation),
        Probe("schauder", probe_schauder),
        Probe("heat_commutator", probe_heat_commutator),
        Probe("theta_xi", probe_theta_xi),
    )
}

# the functional-inequality suite of the acceptance gate
SUITE = ("paraproduct", "resonant", "commutator", "dform", "localizer_high", "localizer_low",
         "bernstein", "embedding", "interpolation_H")


def fit_constant(probe, seeds):
    return max(probe.fn(s) for s in seeds)


def check_constant(probe, c, seeds, margin=MARGIN):
    ratios = [probe.fn(s) for s in seeds]
    worst = max(ratios)
    return worst <= margin * c, worst


# ------------------------------------------------------------ Bernstein ---

BERNSTEIN_SIZES = (64, 128)


def bernstein_ratios(seed, n, p=np.inf, samples=1):
    """``||grad u||_Lp / (2^j ||u||_Lp)`` for fields living in one block ``j``."""
    part = partition(n)
    rng = _rng(seed, 12 + n)
    out = {}
    for j in range(2, part.jmax):
        vals = []
        for _ in range(samples):
            u = lp_block(part, j, random_field(part.grid, rng, decay=rng.uniform(0.0, 2.0)))
            g1, g2 = gradient(u)
            if p == 2:
                num = math.sqrt(g1.l2() ** 2 + g2.l2() ** 2)
                den = u.l2()
            else:
                num = float(np.sqrt(g1.values() ** 2 + g2.values() ** 2).max())
                den = u.linf()
            vals.append(num / (2.0 ** j * den))
        out[j] = max(vals)
    return out


def fit_bernstein(seeds, p=np.inf):
    table = {}
    for n in BERNSTEIN_SIZES:
        per_j = {}
        for s in seeds:
            for j, r in bernstein_ratios(s, n, p).items():
                per_j[j] = max(per_j.get(j, 0.0), r)
        table[n] = per_j
    return table


def bernstein_spread(table):
    """Largest relative deviation of the per-block constants from their mean."""
    values = np.array([c for per_j in table.values() for c in per_j.values()])
    mean = values.mean()
    return float(np.max(np.abs(values - mean)) / mean)


# -------------------------------------------------------- interpolation ---

INTERP_BETA = 0.5
INTERP_DELTAS = (0.1, 0.01)


def interpolation_terms(seed, n=64):
    """``(||u||^2_{H^beta}, ||grad u||^2, ||u||^2)`` for one random field."""
    part = partition(n)
    rng = _rng(seed, 13)
    u = _field(part, rng, 0.5, 3.0)
    g1, g2 = gradient(u)
    return sobolev_norm(part, u, INTERP_BETA) ** 2, g1.l2() ** 2 + g2.l2() ** 2, u.l2() ** 2


def fit_interpolation(seeds, delta):
    return max((h - delta * g) / l2 for h, g, l2 in (interpolation_terms(s) for s in seeds))


def check_interpolation(seeds, delta, c_delta, margin=MARGIN):
    worst = -math.inf
    ok = True
    for s in seeds:
        h, g, l2 = interpolation_terms(s)
        worst = max(worst, (h - delta * g) / l2)
        ok &= h <= delta * g + margin * c_delta * l2
    return ok, worst


# ------------------------------------------------- solver experiments -----

CROSS_MODE = dict(n=64, dt=2e-3, T=0.5, eps=0.05, nonlinearity="cubic", monitor_every=50)
COERCIVE = dict(n=32, dt=0.01, T=10.0, eps=0.1, nonlinearity="cubic", mode="split", hist_dt=0.02, monitor_every=10)
UNIQUENESS = dict(n=32, dt=0.01, T=2.0, eps=0.1, nonlinearity="cubic", monitor_every=1000)
UNIQ_PERTURBATION = 1e-6
N_CROSS, N_COERCIVE, N_UNIQ = 5, 10, 5
TRANSIENT = 2.0


def cross_mode_discrepancy(seed):
    """``||(phi+psi) - u||_{C^0}(T)`` for split and direct runs sharing everything."""
    part = partition(CROSS_MODE["n"])
    out = []
    for mode in ("direct", "split"):
        cfg = SolverConfig(mode=mode, initial=InitialData("rough", seed=seed), **CROSS_MODE)
        en = enhanced_noise_for(cfg, seed, part)
        state, _ = Solver(cfg, en, part).run()
        out.append(state.solution)
    return holder_norm(part, out[1] - out[0], 0.0)


def coercive_run(seed):
    """Returns ``(max coercive ratio, report)`` of a split run to ``T = 10``."""
    part = partition(COERCIVE["n"])
    cfg = SolverConfig(initial=InitialData("rough", seed=seed), **COERCIVE)
    en = enhanced_noise_for(cfg, seed, part)
    state, _ = Solver(cfg, en, part).run()
    rep = state.report
    return float(np.max(rep.series("coercive_ratio"))), rep


def transient_growth(report, start=TRANSIENT):
    """Largest ``v(t2)/max_{start<=t1<t2} v(t1)`` of the weighted psi sup after the transient."""
    t = np.asarray(report.times)
    v = report.series("psi_weighted")[t >= start]
    if v.size < 2:
        return 0.0
    running = np.maximum.accumulate(v)
    return float(np.max(v[1:] / np.maximum(running[:-1], 1e-300)))


def uniqueness_pair(seed, noise=True, perturbation=UNIQ_PERTURBATION, every=5):
    """Two direct runs from ``u0`` and ``u0 + perturbation * w``; returns the diagnostic report."""
    part = partition(UNIQUENESS["n"])
    cfg = SolverConfig(initial=InitialData("rough", seed=seed), **UNIQUENESS)
    en = enhanced_noise_for(cfg, seed if noise else None, part)
    solver = Solver(cfg, en, part)
    u0 = cfg.initial.build(part.grid)
    bump = random_field(part.grid, _rng(seed, 14), decay=1.0)
    runs = []
    for start in (u0, u0 + bump * perturbation if perturbation else u0):
        _, snaps = solver.run(solver.initial_state(start), snapshot_every=every)
        runs.append(snaps)
    return uniqueness_diagnostic(runs[0], runs[1], en, part, cfg.alpha, cfg.mu, cfg.f, c_used=solver.c_used)


# -------------------------------------------------------- constants file --

def constants_path():
    return resources.files("parapam").joinpath("data").joinpath(CONSTANTS_FILE)


def load_constants(path=None):
    src = path or constants_path()
    with open(src) as fh:
        return json.load(fh)


def run_calibration(n_ineq=50, workers=1, log=print, offset=0):
    """Fit every constant on the calibration seeds; returns the constants dict."""
    from concurrent.futures import ProcessPoolExecutor

    def pmap(fn, seeds):
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                return list(ex.map(fn, seeds))
        return [fn(s) for s in seeds]

    out = {"version": 1, "margin": MARGIN, "calibration_base": CAL_BASE + offset,
           "validation_base": VAL_BASE + offset, "inequalities": {}}
    for name, probe in PROBES.items():
        seeds = calibration_seeds(min(probe.n_cal, n_ineq), offset)
        out["inequalities"][name] = {"c": max(pmap(probe.fn, seeds)), "n_cal": len(seeds)}
        log(f"calibrated {name}: c={out['inequalities'][name]['c']:.6g}")
    seeds = calibration_seeds(n_ineq, offset)
    for p in ("inf", "2"):
        table = fit_bernstein(seeds[:20], np.inf if p == "inf" else 2)
        out.setdefault("bernstein", {})[p] = {
            "per_block": {str(n): {str(j): c for j, c in t.items()} for n, t in table.items()},
            "c": max(c for t in table.values() for c in t.values()),
            "spread": bernstein_spread(table),
        }
        log(f"calibrated bernstein L^{p}: spread={out['bernstein'][p]['spread']:.3f}")
    out["interpolation_H"] = {"beta": INTERP_BETA,
                              "C": {str(d): fit_interpolation(seeds, d) for d in INTERP_DELTAS}}
    cross = pmap(cross_mode_discrepancy, calibration_seeds(N_CROSS, offset))
    out["cross_mode"] = {"values": cross, "tol": MARGIN * max(cross), "median": float(np.median(cross)),
                         "config": CROSS_MODE}
    log(f"calibrated cross-mode tolerance {out['cross_mode']['tol']:.3g}")
    coer = pmap(coercive_run, calibration_seeds(N_COERCIVE, offset))
    out["coercive"] = {"c": max(r for r, _ in coer), "transient_growth": max(transient_growth(rep) for _, rep in coer),
                       "config": COERCIVE}
    log(f"calibrated coercive constant {out['coercive']['c']:.4g}")
    rates = [fit_growth_rate(r) for r in pmap(uniqueness_pair, calibration_seeds(N_UNIQ, offset))]
    out["uniqueness"] = {"rate": max(rates), "rates": rates, "config": UNIQUENESS,
                         "perturbation": UNIQ_PERTURBATION}
    log(f"calibrated Gronwall rate {out['uniqueness']['rate']:.4g}")
    return out


def write_constants(constants, path):
    with open(path, "w") as fh:
        json.dump(constants, fh, indent=2, sort_keys=True)
        fh.write("\n")
