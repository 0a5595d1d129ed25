"""Sharp discrete Poincare constants of a grid, by power iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import operator_matrix
from .errors import NotConverged
from .hodge import pressure_operator


@dataclass
class PoincareEstimate:
    value: float
    parts: list = field(default_factory=list)
    iterations: list = field(default_factory=list)


def _inverse_iteration(solve, apply, n, tol, cap, seed=0):
    """Smallest eigenvalue of an SPD operator given `solve` = A^{-1} and `apply` = A."""
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = float(x @ apply(x))
    for it in range(1, cap + 1):
        y = solve(x)
        x = y / np.linalg.norm(y)
        new = float(x @ apply(x))
        if abs(new - lam) <= tol * abs(new):
            return new, it
        lam = new
    raise NotConverged(f"inverse iteration did not settle in {cap} steps", residual=None,
                       iterations=cap, best=lam)


def directional_stiffness(grid, axis):
    """B^T B for B = forward difference along `axis`, rows over all points,
    columns over interior points (functions vanish on the boundary layer)."""
    I = grid.interior_index
    B = operator_matrix(grid, "forward", axis)[:, I]
    return (B.T @ B).tocsc()


def estimate_poincare_I(grid, tol=1e-8, cap=10_000) -> PoincareEstimate:
    """Smallest A with sum |phi|^2 <= A^2 sum |D_i^+ phi|^2 for every axis i.

    Sums run over all grid points; phi vanishes on the boundary layer.
    """
    if grid.periodic:
        raise ValueError("the zero-boundary Poincare constant needs a Dirichlet grid")
    parts, iters = [], []
    for axis in range(3):
        M = directional_stiffness(grid, axis)
        lu = spla.splu(M)
        lam, it = _inverse_iteration(lu.solve, lambda v: M @ v, M.shape[0], tol, cap, seed=axis)
        parts.append(1.0 / math.sqrt(lam))
        iters.append(it)
    return PoincareEstimate(max(parts), parts, iters)


def estimate_poincare_II(grid, tol=1e-8, cap=10_000) -> PoincareEstimate:
    """Smallest A with sum over mean-zero sets of |phi - mean|^2 <= A^2 sum_interior |grad phi|^2.

    For each pressure block the top eigenvalue of K^+ P is found by power
    iteration, where K = G^T G and P removes the mean on the block's
    mean-zero set.
    """
    op = pressure_operator(grid)
    parts, iters = [], []
    for k, blk in enumerate(op.blocks):
        if blk.gauge is None:
            continue
        m = blk.members.size
        K = blk.matrix
        ones = sp.csc_matrix(np.ones((m, 1)))
        bordered = sp.bmat([[K, ones], [ones.T, None]], format="csc")
        lu = spla.splu(bordered)
        g = blk.gauge

        def P(v, g=g):
            out = np.zeros_like(v)
            out[g] = v[g] - v[g].mean()
            return out

        def Kplus(r, lu=lu, m=m):
            return lu.solve(np.append(r, 0.0))[:m]

        x = np.random.default_rng(k).standard_normal(m)
        x = Kplus(P(x))
        mu = 0.0
        for it in range(1, cap + 1):
            x /= np.linalg.norm(x)
            new = float(x @ P(x)) / float(x @ (K @ x))
            if abs(new - mu) <= tol * new:
                break
            mu = new
            x = Kplus(P(x))
        else:
            raise NotConverged(f"power iteration did not settle in {cap} steps", iterations=cap, best=mu)
        parts.append(math.sqrt(new))
        iters.append(it)
    return PoincareEstimate(max(parts), parts, iters)


def r0_bound(A_hat: float, alpha: float) -> float:
    """Absorbing-ball radius for unit-period forcing of sliding L2 size alpha."""
    if not A_hat > 0 or alpha < 0:
        raise ValueError("need A_hat > 0 and alpha >= 0")
    c = A_hat ** -2
    return (1.0 / (1.0 - math.exp(-c))) * math.sqrt((1.0 - math.exp(-2.0 * c)) / (2.0 * c)) * alpha
