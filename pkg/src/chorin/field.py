"""Grid functions, discrete norms, sampling of continuum data, interpolation."""
from __future__ import annotations

import math

import numpy as np

from .errors import GridMismatch, OutsideCoverage

_GAUSS = np.array([-1.0, 1.0]) / (2.0 * math.sqrt(3.0))  # 2-point nodes on [-1/2, 1/2]


class Field:
    """Values on grid ordinals; reads outside the grid are 0 (or wrap on the torus)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.n:
            raise GridMismatch(f"field has {values.shape[0]} values, grid has {grid.n} points")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(cls._shape(grid)))

    @staticmethod
    def _shape(grid):
        return (grid.n,)

    def copy(self):
        return type(self)(self.grid, self.values.copy())

    def _other(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._other(other))

    def __mul__(self, c):
        return type(self)(self.grid, self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return type(self)(self.grid, self.values / c)

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.grid.n}, h={self.grid.h})"


class ScalarField(Field):
    __slots__ = ()

    def __init__(self, grid, values):
        super().__init__(grid, values)
        if self.values.ndim != 1:
            raise ValueError("scalar field values must be one-dimensional")


class VectorField(Field):
    __slots__ = ()

    def __init__(self, grid, values):
        super().__init__(grid, values)
        if self.values.shape != (grid.n, 3):
            raise ValueError("vector field values must have shape (n, 3)")

    @staticmethod
    def _shape(grid):
        return (grid.n, 3)

    def component(self, i):
        return ScalarField(self.grid, self.values[:, i].copy())


def check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same_as(f.grid):
            raise GridMismatch("fields live on different grids")


def inner(u: Field, v: Field) -> float:
    check_same_grid(u, v)
    return float(np.sum(u.values * v.values)) * u.grid.h ** 3


def l2_norm(u: Field) -> float:
    return math.sqrt(float(np.sum(u.values * u.values))) * u.grid.h ** 1.5


def linf_norm(u: Field) -> float:
    if u.values.size == 0:
        return 0.0
    if u.values.ndim == 1:
        return float(np.max(np.abs(u.values)))
    return float(np.max(np.sqrt(np.sum(u.values ** 2, axis=1))))


def _cell_nodes(h):
    offs = h * _GAUSS
    return np.array([(a, b, c) for a in offs for b in offs for c in offs])


def _eval_vector(fn, t, pts):
    out = np.asarray(fn(pts) if t is None else fn(t, pts), dtype=float)
    return np.broadcast_to(out, (pts.shape[0], 3))


def sample_cell_average(fn, grid, mode="interior_only", t=None) -> VectorField:
    """Average of fn over the side-h cube around every point (8-node Gauss rule).

    fn maps an (m, 3) array of physical points to (m, 3) values, or takes
    (t, points) when `t` is given. mode "interior_only" leaves boundary
    points at 0.
    """
    if mode not in ("interior_only", "all"):
        raise ValueError("mode must be 'interior_only' or 'all'")
    sel = grid.interior if mode == "interior_only" else np.ones(grid.n, bool)
    pts = grid.points[sel]
    acc = np.zeros((pts.shape[0], 3))
    for node in _cell_nodes(grid.h):
        acc += _eval_vector(fn, t, pts + node)
    values = np.zeros((grid.n, 3))
    values[sel] = acc / 8.0
    return VectorField(grid, values)


def sample_time_average(fn, grid, t0, tau) -> VectorField:
    """Space-time average of fn(t, x) over [t0, t0 + tau] x C_h(x) at all points."""
    acc = np.zeros((grid.n, 3))
    for s in _GAUSS:
        acc += sample_cell_average(fn, grid, "all", t=t0 + tau * (0.5 + s)).values
    return VectorField(grid, acc / 2.0)


def sample_points(fn, grid, t=None) -> VectorField:
    return VectorField(grid, np.array(_eval_vector(fn, t, grid.points)))


def interpolate_trilinear(u: ScalarField, j: int, query) -> float:
    """Trilinear blend on the 2h-cell of sublattice j that contains `query`.

    Cells are anchored at y in sublattice j with corners y + 2h{0,1}^3.
    """
    grid = u.grid
    q = np.asarray(query, dtype=float) / grid.h
    members = grid.coords[grid.sublattice == j] if j else np.empty((0, 3), int)
    if members.size == 0:
        raise OutsideCoverage(f"sublattice {j} is empty")
    par = members[0] % 2
    base = par + 2 * np.floor((q - par) / 2.0).astype(np.int64)
    # a query on a far face also belongs to the neighboring cell below it
    candidates = [base]
    for axis in range(3):
        if q[axis] == base[axis]:
            candidates += [c - 2 * np.eye(3, dtype=np.int64)[axis] for c in candidates]
    for anchor in candidates:
        k = grid.index_of(anchor)[0]
        if k >= 0 and grid.sublattice[k] == j:
            break
    else:
        raise OutsideCoverage(f"query {tuple(query)} is not covered by sublattice {j}")
    s = (q - anchor) / 2.0
    corners = np.array([anchor + 2 * np.array(a) for a in np.ndindex(2, 2, 2)])
    vals = u.values[grid.index_of(corners)]
    weights = np.array([
        (s[0] if a[0] else 1 - s[0]) * (s[1] if a[1] else 1 - s[1]) * (s[2] if a[2] else 1 - s[2])
        for a in np.ndindex(2, 2, 2)
    ])
    return float(weights @ vals)
