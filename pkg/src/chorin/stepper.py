"""Projection-method time stepping: implicit momentum solve, then projection.

One step maps (u^n, f^n) to the intermediate field u~^{n+1}, which solves

    (u~ - u^n)/tau = -advect(u^n, u~) + nu * lap(u~) + f^n   at interior points,
    u~ = 0                                                   on the boundary layer,

followed by u^{n+1} = P u~^{n+1}.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .calculus import advect, diff, laplacian
from .errors import ConfigError
from .field import VectorField, l2_norm, linf_norm, sample_cell_average, sample_time_average
from .grid import DomainSpec, build_grid
from .hodge import decompose
from .linsolve import krylov_nonsym
from .poincare import estimate_poincare_I, estimate_poincare_II, r0_bound  # noqa: F401

SCALINGS = ("h34", "h2")


@dataclass
class SimConfig:
    domain: DomainSpec
    h: float | None = None
    tau: float | None = None
    scaling: str | None = None
    theta: float = 1.0
    nu: float = 1.0
    T: float | None = None
    steps: int | None = None
    hodge_tol: float = 1e-12
    momentum_tol: float = 1e-12
    forcing: dict = field(default_factory=lambda: {"kind": "zero"})
    initial: dict = field(default_factory=lambda: {"kind": "zero"})
    output_every: int = 0
    ring: int = 4

    def __post_init__(self):
        if self.domain.kind == "torus":
            if self.h is not None and not math.isclose(self.h, 1.0 / self.domain.N):
                raise ConfigError("h: the torus fixes h = 1/N")
            self.h = 1.0 / self.domain.N
        elif self.h is None or not self.h > 0:
            raise ConfigError("h: mesh size must be positive")
        if self.scaling is not None:
            if self.scaling not in SCALINGS:
                raise ConfigError(f"time.scaling: must be one of {SCALINGS}")
            if self.tau is not None:
                raise ConfigError("time.tau: give either tau or a scaling rule, not both")
            if not self.theta > 0:
                raise ConfigError("time.theta: must be positive")
        elif self.tau is None or not self.tau > 0:
            raise ConfigError("time.tau: time step must be positive")
        if not self.nu > 0:
            raise ConfigError("nu: viscosity must be positive")
        if self.steps is None and self.T is None:
            raise ConfigError("steps: give a step count or a horizon T")
        if self.steps is not None and (int(self.steps) != self.steps or self.steps < 0):
            raise ConfigError("steps: must be a nonnegative integer")
        if self.T is not None and not self.T >= 0:
            raise ConfigError("T: horizon must be nonnegative")
        for name in ("hodge_tol", "momentum_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-4:
                raise ConfigError(f"tol.{name.split('_')[0]}: must lie in (0, 1e-4]")

    @property
    def time_step(self):
        if self.scaling == "h34":
            return self.theta * self.h ** 0.75
        if self.scaling == "h2":
            return self.theta * self.h ** 2
        return self.tau

    @property
    def n_steps(self):
        if self.steps is not None:
            return int(self.steps)
        # T in [tau*n, tau*n + tau)
        return int(math.floor(self.T / self.time_step + 1e-9))

    def build_grid(self):
        return build_grid(self.domain, self.h)


@dataclass(frozen=True)
class SimState:
    n: int
    u: VectorField
    u_tilde: VectorField

    @property
    def grid(self):
        return self.u.grid


class Stepper:
    """Scheme operators bound to one grid, time step and viscosity."""

    def __init__(self, grid, tau, nu=1.0, hodge_tol=1e-12, momentum_tol=1e-12, threads=1):
        self.grid = grid
        self.tau = float(tau)
        self.nu = float(nu)
        self.hodge_tol = hodge_tol
        self.momentum_tol = momentum_tol
        self.threads = threads
        self.last_momentum = None
        self.last_hodge = None
        self._pattern = self._build_pattern()

    def _build_pattern(self):
        g = self.grid
        I = g.interior_index
        local = np.full(g.n + 1, -1, dtype=np.int64)  # slot n maps "outside" to -1
        local[I] = np.arange(I.size)
        per_axis = []
        for j in range(3):
            p1 = g.neighbor(j, +1)[I]
            m1 = g.neighbor(j, -1)[I]
            p2 = np.where(p1 >= 0, g.neighbor(j, +1)[np.maximum(p1, 0)], -1)
            m2 = np.where(m1 >= 0, g.neighbor(j, -1)[np.maximum(m1, 0)], -1)
            per_axis.append((p1, m1, local[p1], local[m1], local[p2], local[m2]))
        return I, per_axis

    def momentum_matrix(self, u: VectorField) -> sp.csr_matrix:
        I, per_axis = self._pattern
        a = I.size
        h, tau, nu = self.grid.h, self.tau, self.nu
        rows = np.arange(a)
        R, C, V = [rows], [rows], [np.full(a, 1.0 + 6.0 * tau * nu / h ** 2)]
        uv = np.vstack([u.values, np.zeros((1, 3))])
        for j, (p1, m1, lp1, lm1, lp2, lm2) in enumerate(per_axis):
            up = uv[p1, j]
            um = uv[m1, j]
            c = tau / (4.0 * h)
            V.append(c * (um - up))
            R.append(rows)
            C.append(rows)
            for col, val in ((lp1, -tau * nu / h ** 2), (lm1, -tau * nu / h ** 2)):
                ok = col >= 0
                R.append(rows[ok])
                C.append(col[ok])
                V.append(np.full(int(ok.sum()), val))
            for col, val in ((lp2, c * up), (lm2, -c * um)):
                ok = col >= 0
                R.append(rows[ok])
                C.append(col[ok])
                V.append(val[ok])
        A = sp.coo_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))), shape=(a, a))
        return A.tocsr()

    def momentum_step(self, u: VectorField, f: VectorField | None) -> VectorField:
        g = self.grid
        I = g.interior_index
        rhs = u.values[I].copy()
        if f is not None:
            rhs += self.tau * f.values[I]
        out = np.zeros((g.n, 3))
        if np.any(rhs):
            A = self.momentum_matrix(u)
            x, rep = krylov_nonsym(A, rhs, tol=self.momentum_tol)
            out[I] = x
            self.last_momentum = rep
        else:
            self.last_momentum = None
        return VectorField(g, out)

    def project(self, u_tilde: VectorField):
        dec = decompose(u_tilde, self.hodge_tol, threads=self.threads)
        self.last_hodge = dec
        return dec.w

    def step(self, state: SimState, f: VectorField | None) -> SimState:
        ut = self.momentum_step(state.u, f)
        return SimState(state.n + 1, self.project(ut), ut)

    def initial_state(self, u_tilde0: VectorField) -> SimState:
        ut = VectorField(self.grid, np.where(self.grid.interior[:, None], u_tilde0.values, 0.0))
        return SimState(0, self.project(ut), ut)

    def stencil_residual(self, u: VectorField, u_tilde: VectorField, f: VectorField | None):
        """Pointwise defect of the momentum relation, from the matrix-free kernels."""
        rhs = -advect(u, u_tilde).values + self.nu * laplacian(u_tilde).values
        if f is not None:
            rhs = rhs + f.values
        r = (u_tilde.values - u.values) / self.tau - rhs
        r[self.grid.boundary] = u_tilde.values[self.grid.boundary]
        return r


def dissipation(u_tilde: VectorField) -> float:
    """sum_j ||D_j^+ u~||^2 over all grid points."""
    return sum(l2_norm(diff(u_tilde, j, "forward")) ** 2 for j in range(3))


@dataclass
class LedgerRow:
    n: int
    t: float
    norm_u_prev: float
    norm_u_tilde: float
    norm_u: float
    dissipation: float
    norm_f: float
    max_div: float
    step_growth_slack: float
    projection_slack: float
    cumulative_slack: float
    energy_slack: float


class EnergyLedger:
    """Per-step norms and the slack (rhs - lhs) of every a priori estimate.

    A negative slack beyond `atol` is a violation.
    """

    columns = [f for f in LedgerRow.__dataclass_fields__]

    def __init__(self, norm_u0, norm_u_tilde0, norm_v0=None, rtol=1e-9):
        self.norm_u0 = norm_u0
        self.norm_u_tilde0 = norm_u_tilde0
        self.norm_v0 = norm_v0
        self.rtol = rtol
        self.rows: list[LedgerRow] = []
        self._sum_f = 0.0
        self._sum_diss = 0.0
        self._sum_uf = 0.0
        self._sum_f2 = 0.0

    def record(self, n, tau, u_prev, ut, u_next, f, max_div):
        nu_prev, nut, nun = l2_norm(u_prev), l2_norm(ut), l2_norm(u_next)
        nf = l2_norm(f) if f is not None else 0.0
        diss = dissipation(ut)
        self._sum_f += nf * tau
        self._sum_diss += diss * tau
        self._sum_uf += 2.0 * nu_prev * nf * tau
        self._sum_f2 += nf * nf * tau * tau
        energy_rhs = self.norm_u0 ** 2 - self._sum_diss + self._sum_uf + self._sum_f2
        row = LedgerRow(
            n=n, t=(n + 1) * tau, norm_u_prev=nu_prev, norm_u_tilde=nut, norm_u=nun,
            dissipation=diss, norm_f=nf, max_div=max_div,
            step_growth_slack=nu_prev + nf * tau - nut,
            projection_slack=nut - nun,
            cumulative_slack=self.norm_u0 + self._sum_f - nun,
            energy_slack=energy_rhs - nun ** 2,
        )
        self.rows.append(row)
        return row

    def _scale(self, row):
        return max(1.0, self.norm_u0, row.norm_u_prev, row.norm_u_tilde) ** 2

    def init_violations(self):
        out = []
        if self.norm_u0 > self.norm_u_tilde0 * (1 + self.rtol) + 1e-300:
            out.append("init: |u0| > |u~0|")
        if self.norm_v0 is not None and self.norm_u_tilde0 > self.norm_v0 * (1 + self.rtol):
            out.append("init: |u~0| > |v0|_L2")
        return out

    def violations(self):
        out = self.init_violations()
        for r in self.rows:
            atol = self.rtol * self._scale(r)
            for name in ("step_growth_slack", "projection_slack", "cumulative_slack", "energy_slack"):
                if getattr(r, name) < -atol:
                    out.append(f"step {r.n}: {name} = {getattr(r, name):.3e}")
        return out

    @property
    def ok(self):
        return not self.violations()

    def as_table(self):
        return [[getattr(r, c) for c in self.columns] for r in self.rows]


@dataclass
class Trajectory:
    grid: object
    tau: float
    states: deque
    keep: str = "ring"
    momentum_iterations: list = field(default_factory=list)
    hodge_iterations: list = field(default_factory=list)
    max_residual: float = 0.0

    @property
    def last(self):
        return self.states[-1]


def _resolve_data(config, v0, f):
    from .scenarios import make_forcing, make_initial
    if v0 is None:
        v0 = make_initial(config.initial, config.domain)
    if f is None:
        f = make_forcing(config.forcing, config.domain, config.nu)
    return v0, f


def forcing_sampler(f, grid, tau):
    """n -> f^n, the space-time cell average of f over step n (None when f is None)."""
    if f is None:
        return lambda n: None
    if hasattr(f, "sample"):
        return f.sample
    return lambda n: sample_time_average(f, grid, n * tau, tau)


def init(config: SimConfig, v0, grid=None, threads=1):
    """Initial state: u~0 = interior cell averages of v0, u0 = P u~0."""
    grid = grid or config.build_grid()
    stepper = Stepper(grid, config.time_step, config.nu, config.hodge_tol, config.momentum_tol, threads)
    ut0 = sample_cell_average(v0, grid, "interior_only") if v0 is not None else VectorField.zeros(grid)
    return stepper.initial_state(ut0), stepper


def momentum_step(state: SimState, f_n, tau, nu=1.0, tol=1e-12):
    return Stepper(state.grid, tau, nu, momentum_tol=tol).momentum_step(state.u, f_n)


def step(state: SimState, f_n, tau, nu=1.0, hodge_tol=1e-12, momentum_tol=1e-12):
    return Stepper(state.grid, tau, nu, hodge_tol, momentum_tol).step(state, f_n)


def run(config: SimConfig, v0=None, f=None, grid=None, observer=None, keep="ring",
        norm_v0=None, threads=1, check_stencil=False):
    """Run the scheme for config.n_steps steps.

    v0(points) and f(t, points) are continuum callables (f may also be a
    PeriodicForcing); None falls back to the config descriptors. `observer`
    is called with every state including the initial one. On failure the
    exception carries `.trajectory` and `.ledger` with everything so far.
    """
    v0, f = _resolve_data(config, v0, f)
    state, stepper = init(config, v0, grid, threads)
    grid = state.grid
    tau = config.time_step
    sample = forcing_sampler(f, grid, tau)
    ledger = EnergyLedger(l2_norm(state.u), l2_norm(state.u_tilde), norm_v0)
    states = deque([state], maxlen=None if keep == "all" else max(1, config.ring))
    traj = Trajectory(grid, tau, states, keep)
    if observer:
        observer(state)
    try:
        for n in range(config.n_steps):
            fn = sample(n)
            new = stepper.step(state, fn)
            dec = stepper.last_hodge
            traj.hodge_iterations.append(dec.iterations)
            rep = stepper.last_momentum
            traj.momentum_iterations.append(rep.iterations if rep else 0)
            if check_stencil:
                r = stepper.stencil_residual(state.u, new.u_tilde, fn)
                traj.max_residual = max(traj.max_residual, float(np.max(np.abs(r))))
            ledger.record(n, tau, state.u, new.u_tilde, new.u, fn, dec.residual_div)
            state = new
            states.append(state)
            if observer:
                observer(state)
    except Exception as exc:
        exc.trajectory = traj
        exc.ledger = ledger
        raise
    return traj, ledger


def max_speed(state: SimState) -> float:
    return linf_norm(state.u_tilde)
