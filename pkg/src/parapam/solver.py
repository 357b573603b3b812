"""Time integration of the renormalised (nonlinear) parabolic Anderson model.

Two modes share the linear part ``L = -Delta + mu`` and the noise input:

``direct``
    ``du/dt + L u = f(u) + u xi_eps - C_eps u`` with exponential Euler
    (or ETDRK4 for deterministic reference runs).
``split``
    ``u = phi + psi`` with ``phi`` carrying the irregular paraproducts and
    ``psi`` the regular remainder; ``phi_sharp`` follows the time-weighted
    modified-paraproduct ansatz and is refreshed on the history lattice.

Checkpoint layout (``.npz``): ``header`` is a JSON string with the
config hash (horizon ``T`` excluded), noise seed and ``eps``, step counter, ``L``, ``K``, running suprema and the
monitor report; arrays ``u`` (direct) or ``phi``, ``psi``, ``W``
(split), plus ``hist_data``/``hist_origin`` for the history ring.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _accel
from .besov import (
    NormReport,
    build_partition,
    choose_localization_params,
    holder_norm,
    localizer_symbols,
    sobolev_inner,
    sobolev_weight,
    tau,
)
from .noise import (
    EnhancedNoise,
    make_enhanced,
    make_profile,
    sample_white_noise,
    zero_noise,
)
from .paracalc import HistoryRing, PaddedBlocks, commutator, modified_para, para_lo, para_res
from .spectral import (
    SpectralField,
    TorusGrid,
    constant,
    dealiased_product,
    forward_transform,
    from_padded_values,
    generator_symbol,
    padded_values,
    padding_factor,
    polynomial,
    random_field,
    zeros,
)


class BlowUpError(RuntimeError):
    """Raised when the state stops being finite or exceeds the blow-up threshold."""

    def __init__(self, t, trace, reason):
        self.time = t
        self.trace = trace
        tail = ", ".join(f"t={a:.4g}: {b:.4g}" for a, b in trace[-5:])
        super().__init__(f"blow-up at t={t:.6g} ({reason}); recent sup norms: {tail}")


# ---------------------------------------------------------- nonlinearity --

@dataclass(frozen=True)
class NonlinearityPoly:
    """``f(s) = sum_{i=1}^{k-1} a_i s^i`` with the dissipative sign structure.

    Construction checks ``-C0 - C1|s|^k <= s f(s) <= C0 - C2|s|^k`` and
    ``f'(s) <= l`` on a sample grid of ``|s| <= s_max``, plus the leading
    order behaviour for large ``|s|``.
    """

    coeffs: tuple
    C0: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    l: float = 0.0
    s_max: float = 10.0
    name: str = "custom"

    def __post_init__(self):
        a = tuple(float(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", a)
        if len(a) < 2:
            raise ValueError("need at least a_1 and a_2 (k >= 3)")
        k = self.k
        if a[-1] >= 0 or k % 2:
            raise ValueError(f"need k even and a_(k-1) < 0; got k={k}, a_(k-1)={a[-1]}")
        if min(self.C0, self.C1, self.C2) <= 0 or self.l < 0:
            raise ValueError("dissipation constants must be positive")
        if a[-1] + self.C2 > 0:
            raise ValueError(f"C2={self.C2} exceeds -a_(k-1)={-a[-1]}; upper bound fails for large |s|")
        if a[-1] + self.C1 < 0:
            raise ValueError(f"C1={self.C1} below -a_(k-1)={-a[-1]}; lower bound fails for large |s|")
        s = np.linspace(-self.s_max, self.s_max, 20001)
        sf = s * self(s)
        sk = np.abs(s) ** k
        slack = 1e-12 * (1.0 + sk)
        if np.any(sf + self.C2 * sk - self.C0 > slack):
            worst = s[np.argmax(sf + self.C2 * sk - self.C0)]
            raise ValueError(f"s f(s) <= C0 - C2|s|^k fails near s={worst:.4g}")
        if np.any(sf + self.C0 + self.C1 * sk < -slack):
            worst = s[np.argmin(sf + self.C0 + self.C1 * sk)]
            raise ValueError(f"s f(s) >= -C0 - C1|s|^k fails near s={worst:.4g}")
        if np.any(self.derivative(s) > self.l + 1e-12):
            worst = s[np.argmax(self.derivative(s))]
            raise ValueError(f"f'(s) <= l fails near s={worst:.4g}")

    @property
    def k(self):
        return len(self.coeffs) + 1

    @property
    def degree(self):
        return len(self.coeffs)

    @property
    def ascending(self):
        return np.array((0.0,) + self.coeffs)

    def __call__(self, s):
        return _accel.horner(self.ascending, np.asarray(s, dtype=np.float64))

    def derivative(self, s):
        d = np.array([i * c for i, c in enumerate(self.coeffs, start=1)])
        return _accel.horner(d, np.asarray(s, dtype=np.float64))

    def apply(self, u):
        return polynomial(self.ascending, u, self.degree)

    @classmethod
    def cubic(cls):
        return cls((0.0, 0.0, -1.0), C0=1.0, C1=1.0, C2=1.0, l=0.0, name="cubic")

    @classmethod
    def allen_cahn(cls):
        return cls((1.0, 0.0, -1.0), C0=1.0, C1=1.0, C2=0.5, l=1.0, name="allen_cahn")


def make_nonlinearity(name):
    """``cubic`` (``-s^3``), ``allen_cahn`` (``s - s^3``) or ``zero`` (returns None)."""
    if name in (None, "", "zero", "none", "linear"):
        return None
    if name == "cubic":
        return NonlinearityPoly.cubic()
    if name == "allen_cahn":
        return NonlinearityPoly.allen_cahn()
    raise ValueError(f"unknown nonlinearity {name!r}")


# ------------------------------------------------------------ config ----

@dataclass(frozen=True)
class InitialData:
    """``rough`` (sum of (1+|k|)^(-1+delta0) g_k), ``constant``, ``zero`` or ``file`` (.npy grid values)."""

    kind: str = "rough"
    value: float = 0.0
    seed: int = 0
    delta0: float = 0.01
    amplitude: float = 1.0
    path: str = ""

    def build(self, grid):
        if self.kind == "zero":
            return zeros(grid)
        if self.kind == "constant":
            return constant(grid, self.value)
        if self.kind == "rough":
            rng = np.random.default_rng([int(self.seed), 7])
            return random_field(grid, rng, decay=1.0 - self.delta0, amplitude=self.amplitude)
        if self.kind == "file":
            values = np.load(self.path, allow_pickle=False)
            if values.shape != grid.shape:
                raise ValueError(f"initial data in {self.path} has shape {values.shape}, grid is {grid.shape}")
            return forward_transform(values, grid)
        raise ValueError(f"unknown initial data kind {self.kind!r}")


MODES = ("direct", "split")
SCHEMES = ("euler", "etdrk4")


@dataclass(frozen=True)
class SolverConfig:
    n: int = 64
    mu: float = 1.0
    nonlinearity: str = "cubic"
    alpha: float = 0.8
    kappa: float = 0.1
    dt: float = 1e-3
    T: float = 1.0
    mode: str = "direct"
    scheme: str = "euler"
    eps: float = 0.1
    renormalize: bool = True
    renorm_lattice: str = "infinite"
    profile: str = "gaussian"
    sigma: float = 0.25
    convention: str = "reduced"
    initial: InitialData = field(default_factory=InitialData)
    monitor_every: int = 10
    gamma_loc: float = 1.0
    hist_dt: float = 0.01
    causal: bool = True
    verbatim: bool = False
    max_substeps: int = 256
    blowup: float = 1e8

    def __post_init__(self):
        if not 2.0 / 3.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (2/3, 1), got {self.alpha}")
        if not 0 < self.kappa < min(1.0 - self.alpha, 1.0 / 3.0):
            raise ValueError(f"kappa must lie in (0, min(1-alpha, 1/3)), got {self.kappa}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.mode == "split" and self.scheme != "euler":
            raise ValueError("split mode is integrated with exponential Euler only")
        if self.renorm_lattice not in ("infinite", "grid"):
            raise ValueError("renorm_lattice must be 'infinite' or 'grid'")
        for name in ("mu", "dt", "T", "eps", "gamma_loc", "hist_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")
        make_nonlinearity(self.nonlinearity)

    @property
    def f(self):
        return make_nonlinearity(self.nonlinearity)

    @property
    def weight_k(self):
        f = self.f
        return f.k if f is not None else 4

    @property
    def hist_stride(self):
        return max(1, int(round(self.hist_dt / self.dt)))

    @property
    def ansatz_gamma(self):
        return 1.0 / (self.weight_k - 2) + self.alpha / 2.0

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("initial"), dict):
            d["initial"] = InitialData(**d["initial"])
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def dynamics_digest(self):
        """Hash of everything except the horizon ``T``; checkpoints are keyed on it."""
        d = self.to_dict()
        d.pop("T")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def enhanced_noise_for(cfg, seed, part=None):
    """Enhanced pair for ``cfg`` and noise seed; ``seed=None`` gives the zero noise."""
    grid = TorusGrid(cfg.n)
    if seed is None:
        return zero_noise(grid, cfg.mu, cfg.eps, cfg.convention)
    part = part or build_partition(grid)
    profile = make_profile(cfg.profile, **({"sigma": cfg.sigma} if cfg.profile == "gaussian" else {}))
    return make_enhanced(sample_white_noise(seed, grid), cfg.eps, cfg.mu, part, profile, cfg.convention)


# ------------------------------------------------------------- state ----

@dataclass
class SolverState:
    n: int
    dt: float
    u: SpectralField = None
    phi: SpectralField = None
    psi: SpectralField = None
    W: SpectralField = None
    hist: HistoryRing = None
    L: float = 0.0
    K: float = 0.0
    u_sup: float = 0.0
    psi_term_sup: float = 0.0
    psi_term_sup_alt: float = 0.0
    last_Psi_linf: float = 0.0
    substeps: int = 0
    report: NormReport = field(default_factory=NormReport)
    trace: list = field(default_factory=list)

    @property
    def t(self):
        return self.n * self.dt

    @property
    def split(self):
        return self.phi is not None

    @property
    def solution(self):
        return self.phi + self.psi if self.split else self.u

    @property
    def phisharp(self):
        if not self.split:
            return None
        return self.phi - self.W


# ---------------------------------------------------------- φ functions --

def _phi_series(z, order, terms=25):
    out = np.zeros_like(z)
    fact = math.factorial(order)
    term = np.ones_like(z) / fact
    for i in range(terms):
        out += term
        term = term * z / (order + i + 1)
    return out


def phi_functions(z):
    """``phi_1, phi_2, phi_3`` at real ``z`` (series near zero)."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < 1.0
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    p1 = np.where(small, _phi_series(z, 1), em1 / zs)
    p2 = np.where(small, _phi_series(z, 2), (em1 - zs) / zs**2)
    p3 = np.where(small, _phi_series(z, 3), (em1 - zs - 0.5 * zs * zs) / zs**3)
    return p1, p2, p3


# -------------------------------------------------------------- context --

class Solver:
    """Precomputed operators for one ``(cfg, noise)`` pair and the stepping loop."""

    def __init__(self, cfg, en=None, part=None):
        self.cfg = cfg
        self.grid = TorusGrid(cfg.n)
        self.part = part or build_partition(self.grid)
        if en is None:
            en = zero_noise(self.grid, cfg.mu, cfg.eps, cfg.convention)
        if en.grid != self.grid:
            raise ValueError(f"noise grid {en.grid} does not match config N={cfg.n}")
        if abs(en.mu - cfg.mu) > 1e-15 * cfg.mu:
            raise ValueError(f"noise built for mu={en.mu}, config has mu={cfg.mu}")
        self.en = en
        self.f = cfg.f
        if not cfg.renormalize:
            self.c_used = 0.0
        elif cfg.renorm_lattice == "grid":
            self.c_used = en.c_eps_grid
        else:
            self.c_used = en.c_eps
        self.m = generator_symbol(self.grid, cfg.mu, cfg.convention)
        degree = self.f.degree if self.f is not None else 1
        self.pad_m = padding_factor(max(degree, 2)) * self.grid.n
        self.xi_pad = padded_values(en.xi_eps.coeffs, self.pad_m, True)
        self.xi_sup = float(np.abs(en.xi_eps.values()).max()) if en.seed >= 0 else 0.0
        self._lin = {}
        self._loc = {}
        self.k = cfg.weight_k
        if cfg.mode == "split":
            self.area = en.area + constant(self.grid, en.c_eps - self.c_used)
            self.b_xi = PaddedBlocks(self.part, en.xi_eps)
            self.b_theta = PaddedBlocks(self.part, en.theta_eps)
            self.b_area = PaddedBlocks(self.part, self.area)
            self.theta_res_xi = para_res(self.part, self.b_theta, self.b_xi)

    # linear propagators for step h = dt / nsub
    def _linear(self, nsub):
        if nsub not in self._lin:
            h = self.cfg.dt / nsub
            z = -h * self.m
            p1, p2, p3 = phi_functions(z)
            ph1, _, _ = phi_functions(z / 2)
            self._lin[nsub] = {
                "h": h,
                "E": np.exp(z),
                "E2": np.exp(z / 2),
                "p1": p1,
                "ph1": ph1,
                "f1": p1 - 3 * p2 + 4 * p3,
                "f2": p2 - 2 * p3,
                "f3": 4 * p3 - p2,
            }
        return self._lin[nsub]

    def _localized(self, kind, level):
        key = (kind, level)
        if key not in self._loc:
            lo_sym, hi_sym = localizer_symbols(self.part, level, self.cfg.gamma_loc)
            src = self.en.xi_eps if kind == "xi" else self.area
            lo = SpectralField(self.grid, lo_sym * src.coeffs, True)
            hi = SpectralField(self.grid, hi_sym * src.coeffs, True)
            if len(self._loc) > 64:
                self._loc.clear()
            self._loc[key] = (PaddedBlocks(self.part, lo), PaddedBlocks(self.part, hi))
        return self._loc[key]

    # ---------------------------------------------------- right-hand side
    def rhs_direct(self, u):
        """``f(u) + u xi_eps - C u`` in a single alias-free evaluation."""
        up = padded_values(u.coeffs, self.pad_m, True)
        vals = up * self.xi_pad - self.c_used * up
        if self.f is not None:
            vals = vals + self.f(up)
        return from_padded_values(vals, self.grid, True)

    def stable_substeps(self, u):
        fprime = 0.0
        if self.f is not None:
            fprime = float(np.abs(self.f.derivative(u.values())).max())
        cap = 0.5 / (1.0 + fprime + self.xi_sup + abs(self.c_used))
        nsub = max(1, int(math.ceil(self.cfg.dt / cap - 1e-12)))
        if nsub > self.cfg.max_substeps:
            raise BlowUpError(0.0, [], f"stability needs {nsub} substeps > max_substeps={self.cfg.max_substeps}")
        return nsub

    # --------------------------------------------------------- split terms
    def modified(self, hist, t):
        """``W = tau^-g [(tau^g u) << theta](t)``; plain paraproduct during warm-up."""
        return float(tau(t)) ** (-self.cfg.ansatz_gamma) * modified_para(self.part, hist, self.b_theta, t, self.cfg.causal)

    def terms(self, phi, psi, W, L, K):
        """``(Phi, Psi, f(psi))`` for the split system."""
        return assemble_split(self, phi, psi, W, L, K, verbatim=self.cfg.verbatim)

    # ------------------------------------------------------------- states
    def initial_state(self, u0=None):
        cfg = self.cfg
        if u0 is None:
            u0 = cfg.initial.build(self.grid)
        if cfg.mode == "direct":
            state = SolverState(0, cfg.dt, u=u0)
        else:
            hist = HistoryRing.for_support(self.grid, cfg.hist_stride * cfg.dt, 1.0, "tau^gamma u")
            zero = zeros(self.grid)
            hist.push(0.0, zero)
            W = para_lo(self.part, u0, self.b_theta)
            state = SolverState(0, cfg.dt, phi=u0, psi=zero, W=W, hist=hist)
        state.report.meta.update(self.report_meta())
        self.monitor(state, force=True)
        return state

    def report_meta(self):
        cfg = self.cfg
        return {
            "mode": cfg.mode,
            "scheme": cfg.scheme,
            "gamma_loc": cfg.gamma_loc,
            "kernel": "causal" if cfg.causal else "two-sided",
            "c_used": self.c_used,
            "weight_k": self.k,
        }

    def step(self, state):
        if state.split:
            return self._step_split(state)
        return self._step_direct(state)

    def _check(self, state, fields):
        sup = max(f.linf() for f in fields)
        state.trace.append((state.t, sup))
        del state.trace[:-50]
        if not math.isfinite(sup):
            raise BlowUpError(state.t, state.trace, "non-finite state")
        if sup > self.cfg.blowup:
            raise BlowUpError(state.t, state.trace, f"sup norm {sup:.3g} > {self.cfg.blowup:g}")

    def _step_direct(self, state):
        u = state.u
        nsub = self.stable_substeps(u)
        lin = self._linear(nsub)
        h = lin["h"]
        for _ in range(nsub):
            if self.cfg.scheme == "euler":
                u = _combine(u, lin["E"], h * lin["p1"], self.rhs_direct(u))
            else:
                u = self._etdrk4(u, lin)
        state.u = u
        state.n += 1
        state.substeps += nsub
        self._check(state, [u])
        self.monitor(state)
        return state

    def _etdrk4(self, u, lin):
        h, E2, ph1 = lin["h"], lin["E2"], lin["ph1"]
        nu = self.rhs_direct(u)
        a = _combine(u, E2, 0.5 * h * ph1, nu)
        na = self.rhs_direct(a)
        b = _combine(u, E2, 0.5 * h * ph1, na)
        nb = self.rhs_direct(b)
        c = SpectralField(self.grid, E2 * a.coeffs + 0.5 * h * ph1 * (2 * nb.coeffs - nu.coeffs), True)
        nc = self.rhs_direct(c)
        coeffs = lin["E"] * u.coeffs + h * (
            lin["f1"] * nu.coeffs + 2 * lin["f2"] * (na.coeffs + nb.coeffs) + lin["f3"] * nc.coeffs
        )
        return SpectralField(self.grid, coeffs, True)

    def _step_split(self, state):
        cfg = self.cfg
        phi, psi = state.phi, state.psi
        nsub = self.stable_substeps(phi + psi)
        lin = self._linear(nsub)
        h = lin["h"]
        for _ in range(nsub):
            Phi, Psi, fpsi = self.terms(phi, psi, state.W, state.L, state.K)
            phi = _combine(phi, lin["E"], h * lin["p1"], Phi)
            psi = _combine(psi, lin["E"], h * lin["p1"], Psi + fpsi if fpsi is not None else Psi)
            state.last_Psi_linf = Psi.linf()
        state.phi, state.psi = phi, psi
        state.n += 1
        state.substeps += nsub
        t = state.t
        self._update_Psi_sups(state, t)
        self._check(state, [phi, psi])
        if state.n % cfg.hist_stride == 0:
            g = cfg.ansatz_gamma
            u = phi + psi
            state.hist.push(t, u * float(tau(t) ** g))
            if t < 4.0 * state.hist.dt_hist:
                state.W = para_lo(self.part, u, self.b_theta)
            else:
                state.W = self.modified(state.hist, t)
        self.monitor(state)
        return state

    def _update_Psi_sups(self, state, t):
        k = self.k
        w = float(tau(t))
        state.psi_term_sup = max(state.psi_term_sup, w ** (1.0 + 1.0 / (k - 2)) * state.last_Psi_linf)
        state.psi_term_sup_alt = max(state.psi_term_sup_alt, w ** (1.0 + 1.0 / (k - 1)) * state.last_Psi_linf)

    # ------------------------------------------------------------ monitors
    def monitor(self, state, force=False):
        cfg = self.cfg
        k = self.k
        t = state.t
        w = float(tau(t))
        u = state.solution
        u_inf = u.linf()
        state.u_sup = max(state.u_sup, w ** (1.0 / (k - 2)) * u_inf)
        if not force and state.n % cfg.monitor_every:
            return None
        entry = {
            "u_linf": u_inf,
            "u_weighted": w ** (1.0 / (k - 2)) * u_inf,
            # the 1/(k-1) exponent appears in the Schauder step for the nonlinearity; log both
            "u_weighted_km1": w ** (1.0 / (k - 1)) * u_inf,
            "u_l2": u.l2(),
        }
        if state.split:
            state.L, state.K = choose_localization_params(state.u_sup, cfg.kappa)
            entry.update(coercive_monitor(state, cfg))
            rho = w ** (1.0 + 1.0 / (k - 2) + (3 * cfg.alpha - 2) / 2)
            entry.update({
                "phisharp_C2a": holder_norm(self.part, state.phisharp, 2 * cfg.alpha),
                "psi_C3a_rho": rho * holder_norm(self.part, state.psi, 3 * cfg.alpha),
                "phi_Ca": holder_norm(self.part, state.phi, cfg.alpha),
                "phi_C3a": holder_norm(self.part, state.phi, 3 * cfg.alpha),
                "L": state.L,
                "K": state.K,
            })
        if state.report.times and t <= state.report.times[-1]:
            return entry
        state.report.record(t, entry)
        return entry

    def run(self, state=None, steps=None, snapshot_every=None, callback=None):
        """Advance ``steps`` steps (default: to ``cfg.T``); returns ``(state, snapshots)``."""
        if state is None:
            state = self.initial_state()
        if steps is None:
            steps = self.cfg.steps - state.n
        snaps = []
        if snapshot_every:
            snaps.append((state.t, state.solution))
        for _ in range(steps):
            self.step(state)
            if snapshot_every and state.n % snapshot_every == 0:
                snaps.append((state.t, state.solution))
            if callback is not None:
                callback(state)
        return state, snaps

    # ---------------------------------------------------------- checkpoint
    def save_checkpoint(self, state, path, noise_seed=None):
        header = {
            "cfg_hash": self.cfg.dynamics_digest(),
            "noise_seed": self.en.seed if noise_seed is None else int(noise_seed),
            "noise_eps": self.en.eps,
            "n": state.n,
            "dt": state.dt,
            "mode": self.cfg.mode,
            "L": state.L,
            "K": state.K,
            "u_sup": state.u_sup,
            "psi_term_sup": state.psi_term_sup,
            "psi_term_sup_alt": state.psi_term_sup_alt,
            "last_Psi_linf": state.last_Psi_linf,
            "substeps": state.substeps,
            "trace": state.trace,
            "report": {"times": state.report.times, "entries": state.report.entries, "meta": state.report.meta},
        }
        arrays = {"header": np.array(json.dumps(header))}
        if state.split:
            arrays.update(phi=state.phi.coeffs, psi=state.psi.coeffs, W=state.W.coeffs)
            hs = state.hist.state()
            arrays.update(hist_data=hs["data"], hist_origin=hs["origin"],
                          hist_meta=np.array([hs["dt_hist"], hs["capacity"], hs["first"]], dtype=np.float64))
        else:
            arrays["u"] = state.u.coeffs
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load_checkpoint(self, path, noise_seed=None):
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header["cfg_hash"] != self.cfg.dynamics_digest():
                raise ValueError("checkpoint was written for a different configuration")
            seed = self.en.seed if noise_seed is None else int(noise_seed)
            if header.get("noise_seed") != seed or header.get("noise_eps") != self.en.eps:
                raise ValueError(
                    f"checkpoint noise (seed {header.get('noise_seed')}, eps {header.get('noise_eps')}) "
                    f"does not match this run (seed {seed}, eps {self.en.eps})")
            rep = header["report"]
            report = NormReport(list(rep["times"]), {k: list(v) for k, v in rep["entries"].items()}, dict(rep["meta"]))
            state = SolverState(int(header["n"]), float(header["dt"]), L=header["L"], K=header["K"],
                                u_sup=header["u_sup"], psi_term_sup=header["psi_term_sup"],
                                psi_term_sup_alt=header["psi_term_sup_alt"],
                                last_Psi_linf=header["last_Psi_linf"], substeps=int(header["substeps"]),
                                report=report, trace=[tuple(x) for x in header["trace"]])
            field_of = lambda key: SpectralField(self.grid, np.array(data[key]), True)  # noqa: E731
            if header["mode"] == "split":
                state.phi, state.psi, state.W = field_of("phi"), field_of("psi"), field_of("W")
                meta = data["hist_meta"]
                state.hist = HistoryRing.from_state(self.grid, {
                    "dt_hist": meta[0], "capacity": int(meta[1]), "first": int(meta[2]),
                    "data": np.array(data["hist_data"]), "origin": np.array(data["hist_origin"]),
                }, "tau^gamma u")
            else:
                state.u = field_of("u")
        return state


def _combine(u, E, c, F):
    return SpectralField(u.grid, E * u.coeffs + c * F.coeffs, True)


# --------------------------------------------------- split-mode assembly --

def _loc_blocks(ctx, L, K):
    lo_xi, hi_xi = ctx._localized("xi", L)
    lo_a, hi_a = ctx._localized("area", K)
    return lo_xi, hi_xi, lo_a, hi_a


def assemble_Phi(ctx, u, L, K, verbatim=False, bu=None):
    """``u<U>xi + u>U>xi + u>U>A + u<U>A`` (sign of the last term flipped when ``verbatim``)."""
    part = ctx.part
    bu = bu or PaddedBlocks(part, u)
    _, hi_xi, _, hi_a = _loc_blocks(ctx, L, K)
    sign = -1.0 if verbatim else 1.0
    return (para_lo(part, bu, hi_xi) + para_lo(part, hi_xi, bu) + para_lo(part, hi_a, bu)
            + para_lo(part, bu, hi_a) * sign)


def assemble_Psi(ctx, phi, psi, W, L, K, verbatim=False, bu=None):
    """Regular collection ``Psi`` (without the ``f(psi)`` of the psi equation)."""
    part = ctx.part
    u = phi + psi
    bu = bu or PaddedBlocks(part, u)
    lo_xi, _, lo_a, _ = _loc_blocks(ctx, L, K)
    sign = -1.0 if verbatim else 1.0
    phisharp = phi - W
    u_lo_theta = para_lo(part, bu, ctx.b_theta)
    out = (
        para_res(part, W - u_lo_theta, ctx.b_xi)
        + para_res(part, phisharp, ctx.b_xi)
        + para_res(part, u_lo_theta, ctx.b_xi) - dealiased_product(u, ctx.theta_res_xi)
        + para_res(part, ctx.b_area, bu)
        + para_lo(part, bu, lo_xi) + para_lo(part, lo_xi, bu)
        + para_lo(part, lo_a, bu) + para_lo(part, bu, lo_a) * sign
    )
    if not verbatim:
        out = out + para_res(part, psi, ctx.b_xi)
    if ctx.f is not None:
        out = out + ctx.f.apply(u) - ctx.f.apply(psi)
    return out


def assemble_split(ctx, phi, psi, W, L, K, verbatim=False):
    u = phi + psi
    bu = PaddedBlocks(ctx.part, u)
    Phi = assemble_Phi(ctx, u, L, K, verbatim, bu)
    Psi = assemble_Psi(ctx, phi, psi, W, L, K, verbatim, bu)
    fpsi = ctx.f.apply(psi) if ctx.f is not None else None
    return Phi, Psi, fpsi


def assemble_wick(part, u, W, en, c_used=None):
    """``u<xi + u>xi + (W - u<theta) o xi + C(u, theta, xi) + u (theta o xi - C) + u_sharp o xi``.

    ``W`` is the modified paraproduct ``u << theta`` and ``u_sharp = u - W``.
    """
    area = en.area if c_used is None else en.area + constant(u.grid, en.c_eps - c_used)
    bu = PaddedBlocks(part, u)
    bxi = PaddedBlocks(part, en.xi_eps)
    btheta = PaddedBlocks(part, en.theta_eps)
    u_lo_theta = para_lo(part, bu, btheta)
    return (
        para_lo(part, bu, bxi) + para_lo(part, bxi, bu)
        + para_res(part, W - u_lo_theta, bxi)
        + commutator(part, bu, btheta, bxi)
        + dealiased_product(u, area)
        + para_res(part, u - W, bxi)
    )


def coercive_monitor(state, cfg):
    """Weighted ``psi`` sup against ``1 + sup(tau^(1+1/(k-2)) ||Psi||)^(1/(k-1))`` (and the 1/(k-1) variant)."""
    if not state.split:
        raise ValueError("coercive monitor needs a split-mode state")
    k = cfg.weight_k
    w = float(tau(state.t))
    value = w ** (1.0 / (k - 2)) * state.psi.linf()
    bound = 1.0 + state.psi_term_sup ** (1.0 / (k - 1))
    bound_alt = 1.0 + state.psi_term_sup_alt ** (1.0 / (k - 1))
    return {
        "psi_weighted": value,
        "coercive_bound": bound,
        "coercive_bound_alt": bound_alt,
        "coercive_ratio": value / bound,
    }


# ------------------------------------------------- public step functions --

_CTX_CACHE = {}


def _context(cfg, en):
    key = (cfg.digest(), id(en))
    ctx = _CTX_CACHE.get(key)
    if ctx is None or ctx.en is not en:
        _CTX_CACHE.clear()
        ctx = _CTX_CACHE[key] = Solver(cfg, en)
    return ctx


def step_direct(state, en, cfg):
    if state.split:
        raise ValueError("step_direct needs a direct-mode state")
    return _context(cfg, en).step(state)


def step_split(state, en, cfg):
    if not state.split:
        raise ValueError("step_split needs a split-mode state")
    return _context(cfg, en).step(state)


def run(cfg, en=None, u0=None, snapshot_every=None):
    solver = Solver(cfg, en)
    state = solver.initial_state(u0)
    return solver.run(state, snapshot_every=snapshot_every)


# ---------------------------------------------------- uniqueness check ----

def checkpoint_header(path):
    """Header dict of a checkpoint without loading its arrays."""
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["header"]))


def wick_difference(part, zeta, en, c_used=None):
    """``zeta <> xi`` from the expansion with ``zeta_sharp = zeta - zeta < theta``."""
    return assemble_wick(part, zeta, para_lo(part, zeta, en.theta_eps), en, c_used)


def uniqueness_diagnostic(run_a, run_b, en, part, alpha, mu, f=None, rate=None, margin=2.0,
                          convention="reduced", c_used=None):
    """``||zeta||_{H^(alpha-1)}`` for ``zeta = u_a - u_b`` with energy-identity residual.

    ``run_a``/``run_b`` are lists of ``(t, u)`` on the same times. With
    ``rate`` the entry ``envelope = margin * exp(rate t) ||zeta(0)||`` is
    reported as well.
    """
    if len(run_a) != len(run_b) or not run_a:
        raise ValueError("runs must be non-empty and sampled at the same times")
    grid = part.grid
    s = alpha - 1.0
    weight = sobolev_weight(part, s)
    m = generator_symbol(grid, mu, convention)
    c = en.c_eps if c_used is None else c_used
    report = NormReport(meta={"norm": f"H^{s:g}", "rate": rate, "margin": margin})
    zetas = []
    for (ta, ua), (tb, ub) in zip(run_a, run_b):
        if abs(ta - tb) > 1e-12 or ua.grid != grid or ub.grid != grid:
            raise ValueError(f"runs disagree on sampling or grid at t={ta} / t={tb}")
        zetas.append((ta, ua - ub, ua, ub))
    z0 = math.sqrt(max(sobolev_inner(part, zetas[0][1], zetas[0][1], s), 0.0))
    for i, (t, z, ua, ub) in enumerate(zetas):
        norm = math.sqrt(max(sobolev_inner(part, z, z, s), 0.0))
        entry = {"zeta_H": norm}
        if rate is not None:
            entry["envelope"] = margin * math.exp(rate * t) * z0
        if 0 < i < len(zetas) - 1:
            (tp, zp, _, _), (tn, zn, _, _) = zetas[i - 1], zetas[i + 1]
            ddt = 0.5 * (sobolev_inner(part, zn, zn, s) - sobolev_inner(part, zp, zp, s)) / (tn - tp)
            dissip = float(np.real(np.sum(weight * m * np.abs(z.coeffs) ** 2)))
            force = dealiased_product(z, en.xi_eps) - z * c
            if f is not None:
                force = force + f.apply(ua) - f.apply(ub)
            rhs = sobolev_inner(part, force, z, s)
            scale = max(abs(ddt), dissip, abs(rhs), 1e-300)
            entry["energy_residual"] = abs(ddt + dissip - rhs) / scale
        report.record(t, entry)
    report.meta["zeta0"] = z0
    return report


def fit_growth_rate(report):
    """Smallest ``C`` with ``||zeta(t)|| <= exp(C t) ||zeta(0)||`` on the report's samples."""
    t = np.asarray(report.times)
    z = report.series("zeta_H")
    z0 = report.meta["zeta0"]
    if z0 == 0:
        return 0.0
    mask = t > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(np.log(np.maximum(z[mask], 1e-300) / z0) / t[mask]))
