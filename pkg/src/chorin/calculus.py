"""Difference operators with zero extension outside the grid (wrap on the torus).

Kernels act on Field objects; `operator_matrix` gives the same stencils as
sparse matrices for the solvers.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .field import Field, ScalarField, VectorField, check_same_grid

VARIANTS = ("forward", "backward", "central", "second")


def _shifted(grid, values, axis, sign):
    """values at x + sign*h*e^axis; 0 where that point is off the grid."""
    return grid.gather(values, grid.neighbor(axis, sign))


def _diff_values(grid, v, axis, variant):
    h = grid.h
    if variant == "forward":
        return (_shifted(grid, v, axis, +1) - v) / h
    if variant == "backward":
        return (v - _shifted(grid, v, axis, -1)) / h
    if variant == "central":
        return (_shifted(grid, v, axis, +1) - _shifted(grid, v, axis, -1)) / (2.0 * h)
    if variant == "second":
        return (_shifted(grid, v, axis, +1) + _shifted(grid, v, axis, -1) - 2.0 * v) / (h * h)
    raise ValueError(f"variant must be one of {VARIANTS}")


def diff(u: Field, i: int, variant: str = "central") -> Field:
    return type(u)(u.grid, _diff_values(u.grid, u.values, i, variant))


def gradient(phi: ScalarField) -> VectorField:
    g = phi.grid
    return VectorField(g, np.stack([_diff_values(g, phi.values, i, "central") for i in range(3)], axis=1))


def divergence(u: VectorField) -> ScalarField:
    g = u.grid
    out = np.zeros(g.n)
    for i in range(3):
        out += _diff_values(g, u.values[:, i], i, "central")
    return ScalarField(g, out)


def laplacian(u: Field) -> Field:
    g = u.grid
    out = np.zeros_like(u.values)
    for i in range(3):
        out += _diff_values(g, u.values, i, "second")
    return type(u)(g, out)


def advect(carrier: VectorField, target: VectorField) -> VectorField:
    """Skew-averaged transport of `target` by `carrier`, zero on the boundary layer.

    At interior x: 1/2 sum_j [c_j D_j w](x - h e^j) + [c_j D_j w](x + h e^j).
    """
    check_same_grid(carrier, target)
    g = carrier.grid
    out = np.zeros((g.n, 3))
    for j in range(3):
        flux = carrier.values[:, j:j + 1] * _diff_values(g, target.values, j, "central")
        out += _shifted(g, flux, j, +1) + _shifted(g, flux, j, -1)
    out *= 0.5
    out[g.boundary] = 0.0
    return VectorField(g, out)


def summation_by_parts_residual(u: VectorField, phi: ScalarField) -> float:
    check_same_grid(u, phi)
    h3 = u.grid.h ** 3
    lhs = float(np.sum(u.values * gradient(phi).values)) * h3
    rhs = float(np.sum(divergence(u).values * phi.values)) * h3
    return lhs + rhs


def operator_matrix(grid, kind: str, axis: int) -> csr_matrix:
    """n x n sparse matrix of a one-axis stencil: a `VARIANTS` entry, 'shift+' or 'shift-'."""
    key = ("op", kind, axis)
    if key in grid.cache:
        return grid.cache[key]
    h = grid.h
    rows_all = np.arange(grid.n)
    plus = grid.neighbor(axis, +1)
    minus = grid.neighbor(axis, -1)
    terms = {
        "forward": [(plus, 1.0 / h), (rows_all, -1.0 / h)],
        "backward": [(rows_all, 1.0 / h), (minus, -1.0 / h)],
        "central": [(plus, 0.5 / h), (minus, -0.5 / h)],
        "second": [(plus, 1.0 / h ** 2), (minus, 1.0 / h ** 2), (rows_all, -2.0 / h ** 2)],
        "shift+": [(plus, 1.0)],
        "shift-": [(minus, 1.0)],
    }
    if kind not in terms:
        raise ValueError(f"unknown stencil {kind!r}")
    rows, cols, vals = [], [], []
    for col, c in terms[kind]:
        ok = col >= 0
        rows.append(rows_all[ok])
        cols.append(col[ok])
        vals.append(np.full(int(ok.sum()), c))
    m = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(grid.n, grid.n)).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    grid.cache[key] = m
    return m
