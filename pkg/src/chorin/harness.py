"""Manufactured solutions, error measurement and refinement studies."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as s

from .field import l2_norm, linf_norm, sample_points
from .grid import DomainSpec

T_SYM = s.Symbol("t", real=True)
X_SYMS = s.symbols("x1 x2 x3", real=True)


def _lambdify_vector(exprs):
    fns = [s.lambdify((T_SYM, *X_SYMS), e, modules="numpy", cse=True) for e in exprs]

    def evaluate(t, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.empty((pts.shape[0], len(fns)))
        for i, fn in enumerate(fns):
            out[:, i] = np.broadcast_to(fn(t, pts[:, 0], pts[:, 1], pts[:, 2]), pts.shape[0])
        return out

    return evaluate


@dataclass
class ManufacturedSolution:
    """Closed-form divergence-free velocity and pressure, as sympy expressions in t, x1, x2, x3."""

    name: str
    velocity_expr: tuple
    pressure_expr: object
    boundary: str  # "dirichlet_compatible" or "torus"
    smoothness: str  # "C3" or "C5"
    domain: DomainSpec
    period: float | None = None

    @cached_property
    def velocity(self):
        return _lambdify_vector(self.velocity_expr)

    @cached_property
    def pressure(self):
        fn = _lambdify_vector((self.pressure_expr,))
        return lambda t, pts: fn(t, pts)[:, 0]

    def initial(self, pts):
        return self.velocity(0.0, pts)

    def divergence_expr(self):
        return s.simplify(sum(s.diff(self.velocity_expr[i], X_SYMS[i]) for i in range(3)))

    def forcing_expr(self, nu=1.0):
        v = self.velocity_expr
        out = []
        for i in range(3):
            term = s.diff(v[i], T_SYM)
            term += sum(v[j] * s.diff(v[i], X_SYMS[j]) for j in range(3))
            term -= nu * sum(s.diff(v[i], X_SYMS[j], 2) for j in range(3))
            term += s.diff(self.pressure_expr, X_SYMS[i])
            out.append(term)
        return tuple(out)


def forcing_from_solution(ms: ManufacturedSolution, nu=1.0):
    """f(t, points) with f = v_t + (v.grad)v - nu lap v + grad p."""
    return _lambdify_vector(ms.forcing_expr(nu))


def _periodic_gain():
    return 1 + s.Rational(1, 2) * s.sin(2 * s.pi * T_SYM)


def torus_solution() -> ManufacturedSolution:
    """Taylor-Green cell plus a Beltrami (ABC) flow on the unit torus, period-1 amplitude."""
    x, y, z = X_SYMS
    k = 2 * s.pi
    g = _periodic_gain()
    tg = (s.sin(k * x) * s.cos(k * y) * s.cos(k * z), -s.cos(k * x) * s.sin(k * y) * s.cos(k * z), 0)
    abc = (s.sin(k * z) + s.cos(k * y), s.sin(k * x) + s.cos(k * z), s.sin(k * y) + s.cos(k * x))
    v = tuple(g * (tg[i] + s.Rational(1, 2) * abc[i]) for i in range(3))
    p = s.Rational(1, 2) * g * s.cos(k * x) * s.cos(k * y)
    return ManufacturedSolution("torus_tg_abc", v, p, "torus", "C5", DomainSpec.torus(8), period=1.0)


def ball_solution(radius=1.0) -> ManufacturedSolution:
    """v = curl(psi) with psi = (R^2 - r^2)^2 g(t) (x2 + 1, x3, x1); v and its first derivatives vanish on r = R."""
    x, y, z = X_SYMS
    R = s.nsimplify(radius)
    g = _periodic_gain()
    bump = (R ** 2 - x ** 2 - y ** 2 - z ** 2) ** 2 * g
    psi = (bump * (y + 1), bump * z, bump * x)
    v = (
        s.diff(psi[2], y) - s.diff(psi[1], z),
        s.diff(psi[0], z) - s.diff(psi[2], x),
        s.diff(psi[1], x) - s.diff(psi[0], y),
    )
    v = tuple(s.expand(c) for c in v)
    p = g * x * y
    return ManufacturedSolution("ball_curl", v, p, "dirichlet_compatible", "C3",
                                DomainSpec.ball(radius=float(radius)), period=1.0)


def bump_solution(support=0.55) -> ManufacturedSolution:
    """Same stream-potential form with psi = (1 - r^2/s^2)^5 g(t) inside r < s and zero outside.

    Every derivative through third order vanishes on r = s, so v is C^3 and sits
    strictly inside the unit ball. It isolates interior discretization error from
    the wall mismatch caused by the grid's boundary inset.
    """
    x, y, z = X_SYMS
    S = s.nsimplify(support)
    g = _periodic_gain()
    q = 1 - (x ** 2 + y ** 2 + z ** 2) / S ** 2
    bump = s.Piecewise((q ** 5, q > 0), (0, True)) * g
    psi = (bump * (y + 1), bump * z, bump * x)
    v = (
        s.diff(psi[2], y) - s.diff(psi[1], z),
        s.diff(psi[0], z) - s.diff(psi[2], x),
        s.diff(psi[1], x) - s.diff(psi[0], y),
    )
    return ManufacturedSolution("ball_bump", v, g * x * y, "dirichlet_compatible", "C3",
                                DomainSpec.ball(), period=1.0)


def zero_solution(domain=None) -> ManufacturedSolution:
    return ManufacturedSolution("zero", (s.Integer(0),) * 3, s.Integer(0), "dirichlet_compatible",
                                "C5", domain or DomainSpec.ball())


SOLUTIONS = {"torus_tg_abc": torus_solution, "ball_curl": ball_solution, "ball_bump": bump_solution, "zero": zero_solution}


def get_solution(name) -> ManufacturedSolution:
    try:
        return SOLUTIONS[name]()
    except KeyError:
        raise KeyError(f"unknown manufactured solution {name!r}; known: {sorted(SOLUTIONS)}") from None


# 4th-order centered stencils
_D1 = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
_D2 = ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12))


def _sample_box(spec):
    if spec.kind == "torus":
        return np.zeros(3), np.ones(3)
    return spec.bounds()


def pde_residual_fd(ms: ManufacturedSolution, nu=1.0, samples=20, eps=1e-3, seed=0):
    """Max |f - (v_t + (v.grad)v - nu lap v + grad p)| at random (t, x), derivatives by finite differences.

    Returns (residual, scale) where scale is the largest |f| seen.
    """
    rng = np.random.default_rng(seed)
    lo, hi = _sample_box(ms.domain)
    f = forcing_from_solution(ms, nu)
    worst = scale = 0.0
    for _ in range(samples):
        t = float(rng.uniform(0, 1))
        x = rng.uniform(lo, hi)[None, :]
        v0 = ms.velocity(t, x)[0]
        vt = sum(c * ms.velocity(t + o * eps, x)[0] for o, c in _D1) / eps
        grad = np.zeros((3, 3))  # grad[j] = d v / d x_j
        lap = np.zeros(3)
        gp = np.zeros(3)
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            grad[j] = sum(c * ms.velocity(t, x + o * e)[0] for o, c in _D1) / eps
            lap += sum(c * ms.velocity(t, x + o * e)[0] for o, c in _D2) / eps ** 2
            gp[j] = sum(c * ms.pressure(t, x + o * e)[0] for o, c in _D1) / eps
        rhs = vt + v0 @ grad - nu * lap + gp
        fx = f(t, x)[0]
        worst = max(worst, float(np.max(np.abs(fx - rhs))))
        scale = max(scale, float(np.max(np.abs(fx))))
    return worst, scale


def boundary_values(ms: ManufacturedSolution, samples=200, seed=0):
    """max |v| at random (t, x) on the analytic boundary of a ball domain."""
    spec = ms.domain
    if spec.kind != "ball":
        raise ValueError("boundary sampling is implemented for balls")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((samples, 3))
    pts = np.asarray(spec.center) + spec.radius * d / np.linalg.norm(d, axis=1, keepdims=True)
    return max(float(np.max(np.abs(ms.velocity(t, pts)))) for t in rng.uniform(0, 1, 5))


def divergence_fd(ms: ManufacturedSolution, samples=20, eps=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    lo, hi = _sample_box(ms.domain)
    worst = 0.0
    for _ in range(samples):
        t = float(rng.uniform(0, 1))
        x = rng.uniform(lo, hi)[None, :]
        div = 0.0
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            div += sum(c * ms.velocity(t, x + o * e)[0, j] for o, c in _D1) / eps
        worst = max(worst, abs(div))
    return worst


# ---- error measurement ----

@dataclass
class ErrorSeries:
    times: list = field(default_factory=list)
    l2_u: list = field(default_factory=list)
    l2_u_tilde: list = field(default_factory=list)
    linf_u: list = field(default_factory=list)
    linf_u_tilde: list = field(default_factory=list)

    @property
    def max_l2(self):
        return max(self.l2_u_tilde) if self.l2_u_tilde else 0.0

    @property
    def max_linf(self):
        return max(self.linf_u_tilde) if self.linf_u_tilde else 0.0


class ErrorTracker:
    """Observer recording errors of every state against point samples of v(n tau, .)."""

    def __init__(self, ms, tau, time_shift=0.0):
        self.ms = ms
        self.tau = tau
        self.shift = time_shift
        self.series = ErrorSeries()

    def __call__(self, state):
        t = state.n * self.tau
        exact = sample_points(self.ms.velocity, state.grid, t + self.shift)
        eu = state.u - exact
        et = state.u_tilde - exact
        s_ = self.series
        s_.times.append(t)
        s_.l2_u.append(l2_norm(eu))
        s_.l2_u_tilde.append(l2_norm(et))
        s_.linf_u.append(linf_norm(eu))
        s_.linf_u_tilde.append(linf_norm(et))


def error_series(states, ms, tau, time_shift=0.0) -> ErrorSeries:
    """Per-step ||u^n - v(n tau)|| and ||u~^n - v(n tau)|| (discrete L2 and max norms)."""
    tr = ErrorTracker(ms, tau, time_shift)
    for st in states:
        tr(st)
    return tr.series


# ---- convergence studies ----

@dataclass
class OrderFit:
    column: str
    order: float
    band: float
    max_residual: float

    @property
    def flagged(self):
        return self.max_residual > 0.2


def fit_order(hs, errors, column=""):
    """Least-squares slope of log(error) against log(h), with the slope's standard error."""
    x = np.log(np.asarray(hs, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        band = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    else:
        band = 0.0
    return OrderFit(column, float(coef[0]), band, float(np.max(np.abs(resid))))


@dataclass
class ConvergenceRow:
    h: float
    tau: float
    steps: int
    points: int
    l2_final: float
    l2_max: float
    linf_final: float
    linf_max: float
    momentum_iterations: int
    hodge_iterations: int


@dataclass
class ConvergenceTable:
    rows: list
    bc: str
    scaling: str
    solution: str
    fits: dict = field(default_factory=dict)
    seconds: list = field(default_factory=list)

    columns = [f for f in ConvergenceRow.__dataclass_fields__]
    error_columns = ("l2_final", "l2_max", "linf_final", "linf_max")

    def __post_init__(self):
        self.rows.sort(key=lambda r: -r.h)
        if len(self.rows) >= 2:
            hs = [r.h for r in self.rows]
            for c in self.error_columns:
                errs = [getattr(r, c) for r in self.rows]
                if all(e > 0 for e in errs):
                    self.fits[c] = fit_order(hs, errs, c)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def beta_star(self, column="l2_max", power=0.25, fit_levels=2):
        """Smallest beta with error <= beta h^power on the `fit_levels` coarsest rows."""
        return max(getattr(r, column) / r.h ** power for r in self.rows[:fit_levels])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(getattr(r, c)) for c in self.columns])
        return buf.getvalue()

    def report(self):
        lines = [f"convergence study: solution={self.solution} bc={self.bc} scaling={self.scaling}"]
        lines.append(f"{'h':>12} {'tau':>12} {'steps':>6} {'L2 final':>12} {'L2 max':>12} {'Linf max':>12}")
        for r in self.rows:
            lines.append(f"{r.h:12.5g} {r.tau:12.5g} {r.steps:6d} {r.l2_final:12.5e} "
                         f"{r.l2_max:12.5e} {r.linf_max:12.5e}")
        for c, fit in self.fits.items():
            flag = "  FLAGGED: log-log residual > 0.2" if fit.flagged else ""
            lines.append(f"order[{c}] = {fit.order:.3f} +/- {fit.band:.3f} "
                         f"(max residual {fit.max_residual:.3f}){flag}")
        if self.bc != "torus" and len(self.rows) >= 3:
            beta = self.beta_star()
            fin = self.rows[-1]
            lines.append(f"bound check: beta* = {beta:.4g} from the two coarsest levels; finest "
                         f"L2 max {fin.l2_max:.4e} vs beta* h^(1/4) = {beta * fin.h ** 0.25:.4e}. "
                         "This is a consistency check of the error bound, not an observed rate.")
        return "\n".join(lines) + "\n"


def _time_step(h, scaling, theta, index, taus):
    if scaling == "h2":
        return theta * h ** 2
    if scaling == "h34":
        return theta * h ** 0.75
    if scaling == "explicit":
        return taus[index]
    raise ValueError(f"unknown scaling {scaling!r}")


def _domain_for(bc, level):
    if bc == "torus":
        return DomainSpec.torus(int(level)), None
    return bc, float(level)


def run_level(ms, domain, h, tau, T, nu=1.0, hodge_tol=1e-12, momentum_tol=1e-12):
    """One manufactured-solution run; returns (ConvergenceRow, ErrorSeries, seconds)."""
    import time

    from .stepper import SimConfig, run

    cfg = SimConfig(domain=domain, h=h, tau=tau, T=T, nu=nu, hodge_tol=hodge_tol, momentum_tol=momentum_tol)
    tracker = ErrorTracker(ms, cfg.time_step)
    t0 = time.perf_counter()
    traj, _ = run(cfg, v0=ms.initial, f=forcing_from_solution(ms, nu), observer=tracker)
    secs = time.perf_counter() - t0
    es = tracker.series
    row = ConvergenceRow(
        h=traj.grid.h, tau=cfg.time_step, steps=cfg.n_steps, points=traj.grid.n,
        l2_final=es.l2_u_tilde[-1], l2_max=es.max_l2,
        linf_final=es.linf_u_tilde[-1], linf_max=es.max_linf,
        momentum_iterations=int(sum(traj.momentum_iterations)),
        hodge_iterations=int(sum(traj.hodge_iterations)),
    )
    return row, es, secs


def convergence_study(ms, levels, scaling="h2", theta=1.0, bc="torus", T=0.25, nu=1.0,
                      taus=None, hodge_tol=1e-12, momentum_tol=1e-12, threads=1) -> ConvergenceTable:
    """Error table over grid levels.

    `levels` are N values for bc="torus" and mesh sizes h when bc is a
    DomainSpec. `scaling` is "h2", "h34" or "explicit" (with `taus`).
    """
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    jobs = []
    for k, lev in enumerate(levels):
        domain, h = _domain_for(bc, lev)
        hh = 1.0 / domain.N if domain.kind == "torus" else h
        jobs.append((domain, h, _time_step(hh, scaling, theta, k, taus)))

    def one(job):
        domain, h, tau = job
        return run_level(ms, domain, h, tau, T, nu, hodge_tol, momentum_tol)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    table = ConvergenceTable([r[0] for r in results], "torus" if bc == "torus" else bc.kind,
                             scaling, ms.name)
    by_h = {r[0].h: r[2] for r in results}
    table.seconds = [by_h[r.h] for r in table.rows]
    return table


# ---- refinement Cauchy diagnostic ----

def _nested_sq_distance(coarse, fine):
    """int |U_c - U_f|^2 for the piecewise-constant extensions on cells [x, x + h)^3."""
    gc, gf = coarse.grid, fine.grid
    ratio = gc.h / gf.h
    r = int(round(ratio))
    if abs(ratio - r) > 1e-9 or r < 1:
        raise ValueError("levels must be nested with an integer mesh ratio")
    parent_z = np.floor_divide(gf.coords, r)
    if gc.periodic:
        parent_z %= gc.N
    parent = gc.index_of(parent_z)
    uc = np.vstack([coarse.values, np.zeros((1, 3))])
    diff = uc[parent] - fine.values  # parent == -1 picks the zero row
    total = float(np.sum(diff ** 2))
    children = np.bincount(parent[parent >= 0], minlength=gc.n)
    total += float(np.sum(np.sum(coarse.values ** 2, axis=1) * (r ** 3 - children)))
    return total * gf.h ** 3


def step_function_distance(states_c, tau_c, states_f, tau_f, T):
    """L2(0, T; L2) distance between the step-in-time, cell-constant interpolants of two runs."""
    cuts = sorted({0.0, T} | {n * tau_c for n in range(len(states_c)) if n * tau_c < T}
                  | {n * tau_f for n in range(len(states_f)) if n * tau_f < T})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        ic = min(int(math.floor(mid / tau_c)), len(states_c) - 1)
        jf = min(int(math.floor(mid / tau_f)), len(states_f) - 1)
        total += (b - a) * _nested_sq_distance(states_c[ic], states_f[jf])
    return math.sqrt(total)


@dataclass
class CauchyReport:
    hs: list
    distances: list

    @property
    def ratios(self):
        d = self.distances
        return [d[k] / d[k + 1] if d[k + 1] > 0 else math.inf for k in range(len(d) - 1)]

    @property
    def monotone(self):
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))


def refinement_cauchy_check(configs, v0, f, T) -> CauchyReport:
    """Distances between successive levels of nested runs sharing initial data and forcing.

    `configs` are SimConfigs ordered coarse to fine; each run must cover [0, T].
    """
    from .stepper import run

    runs = []
    for cfg in configs:
        traj, _ = run(cfg, v0=v0, f=f, keep="all")
        if (len(traj.states)) * cfg.time_step < T - 1e-12:
            raise ValueError("every level must reach the common horizon T")
        runs.append(([st.u_tilde for st in traj.states], cfg.time_step, traj.grid.h))
    dists = []
    for (sc, tc, _), (sf, tf, _) in zip(runs, runs[1:]):
        dists.append(step_function_distance(sc, tc, sf, tf, T))
    return CauchyReport([r[2] for r in runs], dists)


# ---- neighborhood of a periodic solution ----

@dataclass
class PeriodicErrorStudy:
    hs: list
    betas: list
    decay_rate: float
    series: list


def periodic_error_study(ms, hs, theta=1.0, periods=2, nu=1.0, A_hat=None, u_tilde0=None):
    """Fit beta in ||u~^n - v(n tau)|| <= exp(-rate n tau) ||u~^0 - v(0)|| + beta h^(1/4).

    ms must be time-periodic with period 1 and Dirichlet-compatible; tau is
    theta h^(3/4) rounded so that 1/tau is an integer. rate = A_hat^-2 / 2,
    with A_hat estimated per grid when not given.
    """
    from .poincare import estimate_poincare_I
    from .stepper import SimConfig, run

    betas, series = [], []
    rate = None
    for h in hs:
        T1 = max(1, int(round(1.0 / (theta * h ** 0.75))))
        cfg = SimConfig(domain=ms.domain, h=h, tau=1.0 / T1, steps=periods * T1, nu=nu)
        grid = cfg.build_grid()
        a = A_hat if A_hat is not None else estimate_poincare_I(grid).value
        rate = 0.5 / a ** 2
        tracker = ErrorTracker(ms, cfg.time_step)
        v0 = u_tilde0 if u_tilde0 is not None else (lambda pts: np.zeros((pts.shape[0], 3)))
        run(cfg, v0=v0, f=forcing_from_solution(ms, nu), grid=grid, observer=tracker)
        e = np.asarray(tracker.series.l2_u_tilde)
        t = np.asarray(tracker.series.times)
        excess = e - np.exp(-rate * t) * e[0]
        betas.append(float(max(0.0, excess.max())) / h ** 0.25)
        series.append(e)
    return PeriodicErrorStudy(list(hs), betas, rate, series)
