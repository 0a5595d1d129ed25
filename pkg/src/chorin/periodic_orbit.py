"""Time-periodic forcing, the time-one map and its fixed points, and contraction diagnostics."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NotConverged, SmallnessViolated
from .field import VectorField, l2_norm, linf_norm, sample_time_average


class PeriodicForcing:
    """Period-1 forcing sampled once per step of a period of T1 steps.

    `sample(n)` returns the cached space-time average for n mod T1, so
    f^{n+T1} is f^n bit for bit. `fn` may be None for zero forcing.
    """

    def __init__(self, fn, grid, T1, scale=1.0, _cache=None):
        if int(T1) != T1 or T1 < 1:
            raise ValueError("T1 must be a positive integer")
        self.fn = fn
        self.grid = grid
        self.T1 = int(T1)
        self.tau = 1.0 / self.T1
        self.scale = float(scale)
        if _cache is None:
            if fn is None:
                _cache = [None] * self.T1
            else:
                _cache = [sample_time_average(fn, grid, n * self.tau, self.tau).values for n in range(self.T1)]
        self._raw = _cache
        self._cache = [None if v is None else VectorField(grid, self.scale * v) for v in _cache]

    def sample(self, n):
        return self._cache[n % self.T1]

    @property
    def alpha(self):
        """Discrete unit-window L2 size: sqrt(sum over one period of ||f^n||^2 tau)."""
        return math.sqrt(sum(l2_norm(f) ** 2 for f in self._cache if f is not None) * self.tau)

    def scaled(self, factor):
        return PeriodicForcing(self.fn, self.grid, self.T1, self.scale * factor, self._raw)

    def with_alpha(self, target):
        a = self.alpha
        if a == 0:
            raise ValueError("cannot rescale zero forcing")
        return self.scaled(target / a)


def _check_setup(forcing, stepper):
    if not forcing.grid.same_as(stepper.grid):
        raise ValueError("forcing and stepper live on different grids")
    if abs(stepper.tau * forcing.T1 - 1.0) > 1e-12:
        raise ValueError("the time step must be 1/T1")


def _interior_only(u: VectorField):
    return VectorField(u.grid, np.where(u.grid.interior[:, None], u.values, 0.0))


def time_one_map(u_tilde0: VectorField, forcing: PeriodicForcing, stepper, observer=None):
    """u~^0 -> u~^{T1}: project, then take T1 steps of the scheme."""
    _check_setup(forcing, stepper)
    state = stepper.initial_state(u_tilde0)
    if observer:
        observer(state)
    for n in range(forcing.T1):
        state = stepper.step(state, forcing.sample(n))
        if observer:
            observer(state)
    return state.u_tilde


@dataclass
class FixedPointReport:
    iterations: int
    residual: float
    history: list
    certified_small: bool
    beta0: float
    A_hat: float
    max_speed: float
    method: str = "picard"


class _MaxSpeed:
    def __init__(self):
        self.value = 0.0

    def __call__(self, state):
        self.value = max(self.value, linf_norm(state.u_tilde))


def _anderson_step(X, G, m):
    """Type-II Anderson update from iterate history X and map values G (lists of flat arrays)."""
    F = [g - x for x, g in zip(X, G)]
    k = min(m, len(F) - 1)
    if k == 0:
        return G[-1]
    dF = np.stack([F[-i] - F[-i - 1] for i in range(1, k + 1)], axis=1)
    dG = np.stack([G[-i] - G[-i - 1] for i in range(1, k + 1)], axis=1)
    gamma, *_ = np.linalg.lstsq(dF, F[-1], rcond=None)
    return G[-1] - dG @ gamma


def find_fixed_point(forcing: PeriodicForcing, stepper, tol=1e-8, max_iter=200, accel="picard",
                     m=5, A_hat=None, start=None):
    """Iterate the time-one map from `start` (default 0) until ||Phi(u) - u|| <= tol.

    accel is "picard" or "anderson" (window m <= 5). Returns (u~^0, report);
    the report certifies smallness when max_n max_x |u~^n| < 1/(4 A_hat)
    along the returned orbit. Raises NotConverged with the best iterate.
    """
    if accel not in ("picard", "anderson"):
        raise ValueError("accel must be 'picard' or 'anderson'")
    if not 1 <= m <= 5:
        raise ValueError("Anderson window must lie in 1..5")
    grid = stepper.grid
    u = VectorField.zeros(grid) if start is None else _interior_only(start)
    X, G, history = [], [], []
    best = (math.inf, u)
    for it in range(1, max_iter + 1):
        speed = _MaxSpeed()
        phi = time_one_map(u, forcing, stepper, observer=speed)
        res = l2_norm(phi - u)
        history.append(res)
        if res < best[0]:
            best = (res, u)
        if res <= tol:
            beta0 = 0.25 / A_hat if A_hat else math.nan
            report = FixedPointReport(it, res, history, bool(A_hat) and speed.value < beta0,
                                      beta0, A_hat if A_hat else math.nan, speed.value, accel)
            return u, report
        if accel == "picard":
            u = phi
        else:
            X.append(u.values.ravel().copy())
            G.append(phi.values.ravel().copy())
            X, G = X[-(m + 1):], G[-(m + 1):]
            u = VectorField(grid, _anderson_step(X, G, m).reshape(grid.n, 3))
    raise NotConverged(f"fixed-point iteration stopped at residual {best[0]:.3e} after {max_iter} "
                       f"iterations (tol {tol:.1e})", residual=best[0], iterations=max_iter,
                       best=best[1], history=history)


@dataclass
class OrbitCheck:
    gaps: list
    max_gap: float


def orbit_periodicity(u_tilde0, forcing, stepper, periods=2):
    """Re-simulate `periods` periods; gaps[n] = ||u~^{n+T1} - u~^n|| for n in the first period(s)."""
    _check_setup(forcing, stepper)
    states = [stepper.initial_state(u_tilde0)]
    for n in range(periods * forcing.T1):
        states.append(stepper.step(states[-1], forcing.sample(n)))
    T1 = forcing.T1
    gaps = [l2_norm(states[n + T1].u_tilde - states[n].u_tilde) for n in range(1, (periods - 1) * T1 + 1)]
    return OrbitCheck(gaps, max(gaps) if gaps else 0.0)


@dataclass
class ContractionReport:
    norms: list
    ratios: list
    step_bound: float
    decay_rate: float
    fitted_exponent: float
    beta0: float
    max_speed: float
    tau: float
    slack: float = 0.05
    steps_used: int = 0

    @property
    def ratio_violations(self):
        lim = self.step_bound * (1 + self.slack)
        return [(n, r) for n, r in enumerate(self.ratios) if r > lim]

    @property
    def cumulative_violations(self):
        if not self.norms or self.norms[0] == 0:
            return []
        b0 = self.norms[0]
        tau = self.tau
        return [(n, b) for n, b in enumerate(self.norms)
                if b > math.exp(-self.decay_rate * n * tau) * b0 * (1 + self.slack)]

    @property
    def ok(self):
        return not self.ratio_violations and not self.cumulative_violations


def contraction_test(u_tilde0_a, u_tilde0_b, forcing, stepper, n_steps, A_hat, slack=0.05,
                     floor=1e-12, threads=1):
    """Per-step contraction of the difference of two trajectories.

    Trajectory a must satisfy max |u~^n| < 1/(4 A_hat) at every step
    (SmallnessViolated otherwise). Ratios stop once the difference drops
    below `floor` times its initial size, where rounding takes over.
    """
    _check_setup(forcing, stepper)
    beta0 = 0.25 / A_hat

    def trajectory(u0):
        st = stepper.__class__(stepper.grid, stepper.tau, stepper.nu, stepper.hodge_tol, stepper.momentum_tol)
        s = st.initial_state(u0)
        out = [s.u_tilde]
        for n in range(n_steps):
            s = st.step(s, forcing.sample(n))
            out.append(s.u_tilde)
        return out

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            ta, tb = pool.map(trajectory, [_interior_only(u_tilde0_a), _interior_only(u_tilde0_b)])
    else:
        ta = trajectory(_interior_only(u_tilde0_a))
        tb = trajectory(_interior_only(u_tilde0_b))
    speeds = [linf_norm(u) for u in ta]
    for n, sp_ in enumerate(speeds):
        if not sp_ < beta0:
            raise SmallnessViolated(sp_, beta0, n)
    norms = [l2_norm(b - a) for a, b in zip(ta, tb)]
    if norms[0] > 0:
        cut = next((n for n, b in enumerate(norms) if b < floor * norms[0]), len(norms))
        norms = norms[:cut]
    ratios = [norms[n + 1] / norms[n] for n in range(len(norms) - 1) if norms[n] > 0]
    c = A_hat ** -2
    tau = stepper.tau
    if len(norms) >= 2 and norms[0] > 0:
        t = tau * np.arange(len(norms))
        exponent = float(np.polyfit(t, np.log(norms), 1)[0])
    else:
        exponent = -math.inf
    return ContractionReport(norms, ratios, 1.0 / (1.0 + tau * c), 0.5 * c, exponent, beta0,
                             max(speeds), tau, slack, len(norms) - 1)


@dataclass
class UniquenessReport:
    distances: list  # per period m: max pairwise distance of u~^{m T1}
    converged: bool
    divergent: list = field(default_factory=list)

    @property
    def monotone_after(self):
        """First period from which the distances decrease monotonically."""
        d = self.distances
        for k in range(len(d)):
            if all(b <= a for a, b in zip(d[k:], d[k + 1:])):
                return k
        return len(d)


def uniqueness_probe(forcing, stepper, k_starts=3, radius=1.0, periods=20, tol=1e-8, seed=0,
                     reference=None):
    """Evolve k random starts of norm `radius` by the time-one map and track pairwise distances.

    With `reference` (a fixed point), starts whose final distance to it
    exceeds 10 tol are listed as divergent.
    """
    grid = stepper.grid
    rng = np.random.default_rng(seed)
    us = []
    for _ in range(k_starts):
        v = rng.standard_normal((grid.n, 3))
        u = _interior_only(VectorField(grid, v))
        us.append(u * (radius / l2_norm(u)))
    dists = []
    for _ in range(periods):
        us = [time_one_map(u, forcing, stepper) for u in us]
        d = max((l2_norm(a - b) for i, a in enumerate(us) for b in us[i + 1:]), default=0.0)
        dists.append(d)
    divergent = []
    if reference is not None:
        divergent = [i for i, u in enumerate(us) if l2_norm(u - reference) > 10 * tol]
    converged = dists[-1] <= 10 * tol and not divergent
    return UniquenessReport(dists, converged, divergent)
