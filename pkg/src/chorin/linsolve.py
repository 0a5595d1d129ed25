"""Sparse solvers: deflated conjugate gradients and a nonsymmetric Krylov wrapper.

Matrices are scipy CSR matrices in canonical form (sorted indices, no
stored zeros); see `canonical`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotConverged

DENSE_FALLBACK_MAX = 3000


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    method: str = ""


def canonical(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def default_cap(n):
    return int(50 * math.sqrt(n) + 500)


def relative_residual(A, x, b):
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(b - A @ x)) / nb


def _orthonormal(null_basis, n):
    if null_basis is None:
        return np.zeros((n, 0))
    Z = np.asarray(null_basis, dtype=float).reshape(n, -1)
    if Z.shape[1] == 0:
        return Z
    q, _ = np.linalg.qr(Z)
    return q


def cg_deflated(A, b, null_basis=None, tol=1e-10, cap=None, x0=None, max_restarts=8):
    """Conjugate gradients for symmetric positive semidefinite A.

    b and every residual are projected off span(null_basis), so the
    iterate stays orthogonal to the kernel. The reported residual is
    ||P b - A x|| / ||P b|| recomputed from scratch.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    Z = _orthonormal(null_basis, n)
    cap = default_cap(n) if cap is None else int(cap)

    def proj(v):
        return v - Z @ (Z.T @ v) if Z.shape[1] else v

    b_in = float(np.linalg.norm(b))
    b = proj(b)
    nb = float(np.linalg.norm(b))
    # a right-hand side inside the kernel leaves only projection round-off
    if nb <= 1e-14 * b_in or nb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, "cg")
    x = np.zeros(n) if x0 is None else proj(np.asarray(x0, dtype=float).copy())
    target = tol * nb
    it = 0
    for _ in range(max_restarts):
        r = proj(b - A @ x)
        if np.linalg.norm(r) <= target:
            break
        p = r.copy()
        rr = float(r @ r)
        while it < cap:
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                break
            alpha = rr / pAp
            x += alpha * p
            r -= alpha * Ap
            r = proj(r)
            it += 1
            rr_new = float(r @ r)
            if math.sqrt(rr_new) <= 0.5 * target:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        x = proj(x)
        if it >= cap:
            break
    res = float(np.linalg.norm(b - A @ x)) / nb
    report = SolveReport(it, res, res <= tol, "cg")
    if not report.converged:
        raise NotConverged(f"cg stopped at relative residual {res:.3e} after {it} iterations "
                           f"(tol {tol:.1e})", residual=res, iterations=it, best=x)
    return x, report


def _ilu(A):
    try:
        return spla.LinearOperator(A.shape, spla.spilu(A.tocsc(), drop_tol=1e-4, fill_factor=4).solve)
    except RuntimeError:
        return None


def _jacobi(A):
    d = A.diagonal()
    if np.any(d == 0):
        return None
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, lambda v: inv * v.ravel())


def _gmres(A, bk, x, tol, cap, M, count):
    n = A.shape[0]
    nb = float(np.linalg.norm(bk))

    def cb(_):
        count[0] += 1

    res = math.inf
    for _ in range(4):
        x, _info = spla.gmres(A, bk, x0=x, rtol=0.1 * tol, atol=0.0, restart=min(n, 60),
                              maxiter=max(1, cap // 60 + 1), M=M, callback=cb,
                              callback_type="pr_norm")
        res = float(np.linalg.norm(bk - A @ x)) / nb
        if res <= tol or count[0] >= cap:
            break
    return x, res


def krylov_nonsym(A, b, tol=1e-10, cap=None, precondition=True):
    """Restarted GMRES, Jacobi-preconditioned, escalating to incomplete LU and then dense LU.

    b may hold several right-hand sides as columns; preconditioners are
    built once. The dense fallback applies for n <= 3000.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    multi = b.ndim == 2
    B = b if multi else b[:, None]
    n = A.shape[0]
    cap = default_cap(n) if cap is None else int(cap)
    stages = [("gmres+jacobi", _jacobi), ("gmres+ilu", _ilu)] if precondition else [("gmres", None)]
    built = {}
    X = np.zeros_like(B)
    total_it = 0
    worst = 0.0
    level = 0  # highest escalation used: stage index, len(stages) for dense LU
    lu = None
    for k in range(B.shape[1]):
        bk = B[:, k]
        nb = float(np.linalg.norm(bk))
        if nb == 0.0:
            continue
        x = np.zeros(n)
        count = [0]
        res = math.inf
        for i, (name, make) in enumerate(stages):
            if name not in built:
                built[name] = make(A) if make else None
            x, res = _gmres(A, bk, x, tol, cap, built[name], count)
            level = max(level, i)
            if res <= tol:
                break
        if res > tol and n <= DENSE_FALLBACK_MAX:
            if lu is None:
                lu = sla.lu_factor(A.toarray())
            x = sla.lu_solve(lu, bk)
            res = float(np.linalg.norm(bk - A @ x)) / nb
            level = len(stages)
        total_it += count[0]
        X[:, k] = x
        worst = max(worst, res)
        if res > tol:
            raise NotConverged(f"gmres stopped at relative residual {res:.3e} after "
                               f"{count[0]} iterations (tol {tol:.1e})", residual=res,
                               iterations=total_it, best=X if multi else x)
    method = stages[level][0] if level < len(stages) else "dense-lu"
    return (X if multi else X[:, 0]), SolveReport(total_it, worst, True, method)
