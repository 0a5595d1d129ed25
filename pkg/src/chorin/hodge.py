"""Discrete Helmholtz-Hodge decomposition u = w + grad(phi).

w vanishes on the boundary layer and has zero central divergence on every
grid point; phi has zero mean on each core sublattice (on each 2h-shift
component for the torus). Eliminating w leaves the normal equations
G^T G phi = G^T u, where G is the central gradient evaluated at interior
points. G^T G couples only points 2h apart, so it splits into independent
blocks that are solved one at a time by deflated CG.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .calculus import divergence, gradient, operator_matrix
from .errors import NotConverged, SolverDivergence
from .field import ScalarField, VectorField
from .linsolve import canonical, cg_deflated, default_cap


@dataclass
class _Block:
    members: np.ndarray
    matrix: sp.csr_matrix | None
    gauge: np.ndarray | None  # local positions whose mean is pinned to 0


class PressureOperator:
    """Grid-static pieces of the decomposition, built once per grid and cached."""

    def __init__(self, grid):
        self.grid = grid
        self.interior = grid.interior_index
        self.central = [operator_matrix(grid, "central", i)[self.interior] for i in range(3)]
        G = sp.vstack(self.central).tocsr()
        self.gradient_matrix = G
        K = canonical(G.T @ G)
        self.matrix = K
        ncomp, labels = connected_components(K, directed=False)
        owner = np.full(grid.n, -1, dtype=np.int64)
        gauge_of = {}
        for s in grid.mean_zero_sets():
            comp = np.unique(labels[s])
            if comp.size != 1:
                raise SolverDivergence("a mean-zero set spans several pressure blocks")
            gauge_of[int(comp[0])] = s
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
        self.blocks = []
        self.free_blocks = 0
        for c in range(ncomp):
            members = order[bounds[c]:bounds[c + 1]]
            Kc = K[members][:, members]
            if Kc.nnz == 0:
                self.blocks.append(_Block(members, None, None))
                continue
            gauge = None
            if c in gauge_of:
                owner[members] = np.arange(members.size)
                gauge = owner[gauge_of[c]]
            else:
                self.free_blocks += 1
            self.blocks.append(_Block(members, canonical(Kc), gauge))
        self.isolated = int(sum(b.matrix is None for b in self.blocks))

    def rhs(self, u_values):
        ui = u_values[self.interior]
        return sum(self.central[i].T @ ui[:, i] for i in range(3))

    def grad_interior(self, phi):
        return np.stack([self.central[i] @ phi for i in range(3)], axis=1)


def pressure_operator(grid) -> PressureOperator:
    op = grid.cache.get("pressure")
    if op is None:
        op = PressureOperator(grid)
        grid.cache["pressure"] = op
    return op


@dataclass
class HodgeDecomposition:
    w: VectorField
    phi: ScalarField
    residual_div: float
    residual_recon: float
    iterations: int
    solver_residual: float
    free_blocks: int = 0
    block_iterations: list = field(default_factory=list)


def _solve_block(block, b, tol, rng):
    bc = b[block.members]
    m = block.members.size
    x0 = rng.standard_normal(m) if rng is not None else None
    ones = np.ones((m, 1))
    x, rep = cg_deflated(block.matrix, bc, null_basis=ones, tol=tol, cap=default_cap(m), x0=x0)
    if block.gauge is not None:
        x = x - x[block.gauge].mean()
    return x, rep


def decompose(u: VectorField, tol: float = 1e-10, seed=None, threads: int = 1) -> HodgeDecomposition:
    if not 0 < tol <= 1e-4:
        raise ValueError("tol must lie in (0, 1e-4]")
    grid = u.grid
    op = pressure_operator(grid)
    b = op.rhs(u.values)
    phi = np.zeros(grid.n)
    rng = np.random.default_rng(seed) if seed is not None else None
    todo = [blk for blk in op.blocks if blk.matrix is not None]
    # starting guesses are drawn up front so results do not depend on thread timing
    starts = [np.random.default_rng(rng.integers(2**63)) if rng is not None else None for _ in todo]
    try:
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda a: _solve_block(a[0], b, tol, a[1]), zip(todo, starts)))
        else:
            results = [_solve_block(blk, b, tol, r) for blk, r in zip(todo, starts)]
    except NotConverged as exc:
        raise SolverDivergence(f"pressure solve failed: {exc}", residual=exc.residual) from exc
    iters = []
    worst = 0.0
    for blk, (x, rep) in zip(todo, results):
        phi[blk.members] = x
        iters.append(rep.iterations)
        worst = max(worst, rep.residual)
    w = np.zeros((grid.n, 3))
    w[op.interior] = u.values[op.interior] - op.grad_interior(phi)
    wf = VectorField(grid, w)
    pf = ScalarField(grid, phi)
    div = divergence(wf).values
    recon = (w + gradient(pf).values - u.values)[op.interior]
    return HodgeDecomposition(
        w=wf, phi=pf,
        residual_div=float(np.max(np.abs(div))) if div.size else 0.0,
        residual_recon=float(np.max(np.abs(recon))) if recon.size else 0.0,
        iterations=int(sum(iters)), solver_residual=worst,
        free_blocks=op.free_blocks, block_iterations=iters,
    )


def project(u: VectorField, tol: float = 1e-10, **kw) -> VectorField:
    return decompose(u, tol, **kw).w


def full_system_solve(u: VectorField):
    """Dense least-squares solve of the unreduced saddle system.

    Unknowns: w at interior points and phi everywhere. Rows: divergence of
    w at every point, w + grad(phi) = u at interior points, and one mean
    constraint per mean-zero set. Meant for small grids as an independent
    check of `decompose`.
    """
    grid = u.grid
    I = grid.interior_index
    a, n = I.size, grid.n
    D = [operator_matrix(grid, "central", i).toarray() for i in range(3)]
    sets = grid.mean_zero_sets()
    M = np.zeros((n + 3 * a + len(sets), 3 * a + n))
    rhs = np.zeros(M.shape[0])
    for i in range(3):
        M[:n, i * a:(i + 1) * a] = D[i][:, I]
        rows = slice(n + i * a, n + (i + 1) * a)
        M[rows, i * a:(i + 1) * a] = np.eye(a)
        M[rows, 3 * a:] = D[i][I]
        rhs[rows] = u.values[I, i]
    for k, s in enumerate(sets):
        M[n + 3 * a + k, 3 * a + s] = 1.0
    y, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    w = np.zeros((n, 3))
    w[I] = y[:3 * a].reshape(3, a).T
    return VectorField(grid, w), ScalarField(grid, y[3 * a:]), M


@dataclass
class EstimateReport:
    checks: dict

    @property
    def ok(self):
        return all(c["holds"] for c in self.checks.values())


def _check(lhs, rhs, slack=1e-9):
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "holds": lhs <= rhs * (1 + slack) + 1e-300}


def verify_estimates(u: VectorField, dec: HodgeDecomposition, A_tilde: float) -> EstimateReport:
    """Norm bounds of the decomposition, each side evaluated from raw fields."""
    grid = u.grid
    I = grid.interior
    core = grid.core
    gphi = gradient(dec.phi).values
    u_int = float(np.sum(u.values[I] ** 2))
    checks = {
        "projection": _check(float(np.sum(dec.w.values ** 2)), u_int),
        "gradient": _check(float(np.sum(gphi[I] ** 2)), u_int),
        "potential": _check(float(np.sum(dec.phi.values[core] ** 2)),
                            A_tilde ** 2 * float(np.sum(gphi[I] ** 2))),
    }
    edge = np.zeros(grid.n, dtype=bool)
    for k in range(6):
        nb = grid.neighbors[:, k]
        edge |= (nb < 0) | ~core[np.maximum(nb, 0)]
    support_ok = not np.any(u.values[~core | (core & edge)])
    if support_ok:
        div = divergence(u).values
        checks["defect"] = _check(float(np.sum((u.values - dec.w.values)[I] ** 2)),
                                  A_tilde ** 2 * float(np.sum(div[core] ** 2)))
    return EstimateReport(checks)
