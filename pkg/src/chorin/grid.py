"""Staircase lattice domains and the periodic torus.

Points live on hZ^3 and are stored densely by ordinal in lexicographic
(z1, z2, z3) order. Neighbor tables use -1 for "outside the grid".
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedSublattice, EmptyGrid, InvalidN

SQRT3 = math.sqrt(3.0)

# neighbor slot k <-> (axis, step): +e1, -e1, +e2, -e2, +e3, -e3
NEIGHBOR_STEPS = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))

# parity code 4*p1 + 2*p2 + p3 -> sublattice label 1..8, in the order
# eee, eeo, eoe, oee, eoo, ooe, oeo, ooo
_PARITY_LABEL = np.array([1, 2, 3, 5, 4, 7, 6, 8])


def slot(axis, sign):
    return 2 * axis + (0 if sign > 0 else 1)


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    radius: float | None = None
    semiaxes: tuple | None = None
    half_extents: tuple | None = None
    corner_radius: float | None = None
    N: int | None = None

    def __post_init__(self):
        kinds = ("ball", "ellipsoid", "rounded_box", "torus")
        if self.kind not in kinds:
            raise ValueError(f"domain kind must be one of {kinds}, got {self.kind!r}")
        if self.kind == "torus":
            if self.N is None or int(self.N) != self.N or self.N < 4:
                raise InvalidN(f"torus needs an integer N >= 4, got {self.N!r}")
            return
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise ValueError("center must have 3 coordinates")
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise ValueError("ball radius must be positive")
        elif self.kind == "ellipsoid":
            if self.semiaxes is None or len(self.semiaxes) != 3 or min(self.semiaxes) <= 0:
                raise ValueError("ellipsoid semiaxes must be 3 positive numbers")
            object.__setattr__(self, "semiaxes", tuple(float(a) for a in self.semiaxes))
        else:
            he = self.half_extents
            if he is None or len(he) != 3 or min(he) <= 0:
                raise ValueError("rounded_box half_extents must be 3 positive numbers")
            r = self.corner_radius
            if r is None or not 0 < r <= min(he):
                raise ValueError("rounded_box corner_radius must be in (0, min(half_extents)]")
            object.__setattr__(self, "half_extents", tuple(float(a) for a in he))

    @classmethod
    def ball(cls, center=(0.0, 0.0, 0.0), radius=1.0):
        return cls("ball", center=tuple(center), radius=float(radius))

    @classmethod
    def ellipsoid(cls, center, semiaxes):
        return cls("ellipsoid", center=tuple(center), semiaxes=tuple(semiaxes))

    @classmethod
    def rounded_box(cls, center, half_extents, corner_radius):
        return cls("rounded_box", center=tuple(center), half_extents=tuple(half_extents),
                   corner_radius=float(corner_radius))

    @classmethod
    def torus(cls, N):
        return cls("torus", N=int(N))

    def to_dict(self):
        if self.kind == "torus":
            return {"kind": "torus", "N": self.N}
        out = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "ball":
            out["radius"] = self.radius
        elif self.kind == "ellipsoid":
            out["semiaxes"] = list(self.semiaxes)
        else:
            out["half_extents"] = list(self.half_extents)
            out["corner_radius"] = self.corner_radius
        return out

    def bounds(self):
        c = np.asarray(self.center)
        if self.kind == "ball":
            ext = np.full(3, self.radius)
        elif self.kind == "ellipsoid":
            ext = np.asarray(self.semiaxes)
        elif self.kind == "rounded_box":
            ext = np.asarray(self.half_extents)
        else:
            raise ValueError("torus has no bounding box")
        return c - ext, c + ext

    def sdf(self, points):
        """Exact distance to the boundary, positive inside, negative outside."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center)
        if self.kind == "ball":
            return self.radius - np.linalg.norm(p, axis=1)
        if self.kind == "rounded_box":
            r = self.corner_radius
            q = np.abs(p) - (np.asarray(self.half_extents) - r)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return -(outside + inside - r)
        if self.kind == "ellipsoid":
            return np.array([_ellipsoid_sdf(row, self.semiaxes) for row in p])
        raise ValueError("torus has no signed distance")

    def _accept(self, points, threshold):
        """Vectorised `sdf(points) > threshold` with exact fallback for ellipsoids."""
        if self.kind != "ellipsoid":
            return self.sdf(points) > threshold
        a = np.asarray(self.semiaxes)
        p = points - np.asarray(self.center)
        rho = np.sqrt(((p / a) ** 2).sum(axis=1))
        # Inside the ellipsoid, min(a) * (1 - rho) <= distance <= |p| * (1/rho - 1).
        lower = a.min() * (1.0 - rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            upper = np.where(rho > 0, np.linalg.norm(p, axis=1) * (1.0 / rho - 1.0), a.min())
        accept = lower > threshold
        unsure = ~accept & (rho < 1.0) & (upper > threshold)
        for k in np.flatnonzero(unsure):
            accept[k] = _ellipsoid_sdf(p[k], self.semiaxes) > threshold
        return accept


def _bisect_root(func, lo, hi, max_iter=2000):
    flo = func(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = func(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _dist_ellipse(e0, e1, y0, y1):
    # e0 >= e1 > 0, y0, y1 >= 0
    if y1 > 0:
        if y0 > 0:
            z0, z1 = y0 / e0, y1 / e1
            g = z0 * z0 + z1 * z1 - 1.0
            if g == 0.0:
                return 0.0
            r0 = (e0 / e1) ** 2
            n0 = r0 * z0
            s0 = z1 - 1.0
            s1 = 0.0 if g < 0 else math.hypot(n0, z1) - 1.0
            s = _bisect_root(lambda s: (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0, s0, s1)
            x0 = r0 * y0 / (s + r0)
            x1 = y1 / (s + 1.0)
            return math.hypot(x0 - y0, x1 - y1)
        return abs(y1 - e1)
    denom0 = e0 * e0 - e1 * e1
    numer0 = e0 * y0
    if numer0 < denom0:
        xde0 = numer0 / denom0
        x0 = e0 * xde0
        x1 = e1 * math.sqrt(max(0.0, 1.0 - xde0 * xde0))
        return math.hypot(x0 - y0, x1)
    return abs(y0 - e0)


def _dist_ellipsoid(e, y):
    # e sorted descending, y >= 0 componentwise
    e0, e1, e2 = e
    y0, y1, y2 = y
    if y2 > 0:
        if y1 > 0:
            if y0 > 0:
                z = (y0 / e0, y1 / e1, y2 / e2)
                g = z[0] ** 2 + z[1] ** 2 + z[2] ** 2 - 1.0
                if g == 0.0:
                    return 0.0
                r0, r1 = (e0 / e2) ** 2, (e1 / e2) ** 2
                n0, n1 = r0 * z[0], r1 * z[1]
                s0 = z[2] - 1.0
                s1 = 0.0 if g < 0 else math.sqrt(n0 * n0 + n1 * n1 + z[2] ** 2) - 1.0
                s = _bisect_root(
                    lambda s: (n0 / (s + r0)) ** 2 + (n1 / (s + r1)) ** 2 + (z[2] / (s + 1.0)) ** 2 - 1.0,
                    s0, s1)
                x = (r0 * y0 / (s + r0), r1 * y1 / (s + r1), y2 / (s + 1.0))
                return math.sqrt((x[0] - y0) ** 2 + (x[1] - y1) ** 2 + (x[2] - y2) ** 2)
            return _dist_ellipse(e1, e2, y1, y2)
        if y0 > 0:
            return _dist_ellipse(e0, e2, y0, y2)
        return abs(y2 - e2)
    denom0, denom1 = e0 * e0 - e2 * e2, e1 * e1 - e2 * e2
    numer0, numer1 = e0 * y0, e1 * y1
    if numer0 < denom0 and numer1 < denom1:
        xde0, xde1 = numer0 / denom0, numer1 / denom1
        discr = 1.0 - xde0 * xde0 - xde1 * xde1
        if discr > 0:
            x0, x1, x2 = e0 * xde0, e1 * xde1, e2 * math.sqrt(discr)
            return math.sqrt((x0 - y0) ** 2 + (x1 - y1) ** 2 + x2 * x2)
    return _dist_ellipse(e0, e1, y0, y1)


def _ellipsoid_sdf(p, semiaxes):
    order = np.argsort(semiaxes)[::-1]
    e = tuple(float(semiaxes[k]) for k in order)
    y = tuple(abs(float(p[k])) for k in order)
    d = _dist_ellipsoid(e, y)
    inside = sum((yk / ek) ** 2 for yk, ek in zip(y, e)) < 1.0
    return d if inside else -d


def _shift(a, offset, fill):
    """b[x] = a[x + offset], `fill` where x + offset leaves the array."""
    b = np.full_like(a, fill)
    src = []
    dst = []
    for o, n in zip(offset, a.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    b[tuple(dst)] = a[tuple(src)]
    return b


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class LatticeGrid:
    """Shared interface of Dirichlet and torus grids.

    Attributes: h, coords (n, 3) integer lattice indices, neighbors (n, 6)
    ordinals or -1, interior / boundary / core boolean masks, parity labels
    1..8 of every point.
    """

    periodic = False

    def __init__(self, h, coords, neighbors, interior, core):
        self.h = float(h)
        self.coords = _readonly(coords.astype(np.int64))
        self.neighbors = _readonly(neighbors.astype(np.int64))
        self.interior = _readonly(interior.astype(bool))
        self.boundary = _readonly(~self.interior)
        self.core = _readonly(core.astype(bool))
        pc = (self.coords % 2) @ np.array([4, 2, 1])
        self.parity = _readonly(_PARITY_LABEL[pc])
        digest = hashlib.sha256()
        digest.update(np.float64(self.h).tobytes())
        digest.update(self.coords.tobytes())
        self.key = digest.hexdigest()
        self.cache = {}

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def points(self):
        return self.h * self.coords.astype(float)

    @property
    def interior_index(self):
        return np.flatnonzero(self.interior)

    def neighbor(self, axis, sign):
        return self.neighbors[:, slot(axis, sign)]

    def gather(self, values, idx):
        """values[idx] with 0 wherever idx == -1 (zero extension)."""
        pad = np.zeros((1,) + values.shape[1:], dtype=values.dtype)
        return np.concatenate([values, pad])[idx]

    def same_as(self, other):
        return self is other or (type(self) is type(other) and self.key == other.key)

    def mean_zero_sets(self):
        raise NotImplementedError


class DirichletGrid(LatticeGrid):
    def __init__(self, spec, h, origin, mask3):
        self.spec = spec
        self.origin = np.asarray(origin, dtype=np.int64)
        self.mask3 = _readonly(mask3)
        interior3 = mask3.copy()
        for axis, sign in NEIGHBOR_STEPS:
            off = [0, 0, 0]
            off[axis] = sign
            interior3 &= _shift(mask3, off, False)
        core3 = interior3.copy()
        for a in np.ndindex(3, 3, 3):
            if a != (0, 0, 0):
                core3 &= _shift(interior3, a, False)
        index3 = np.full(mask3.shape, -1, dtype=np.int64)
        n = int(mask3.sum())
        index3[mask3] = np.arange(n)
        self.index3 = _readonly(index3)
        coords = np.argwhere(mask3) + self.origin
        neighbors = np.empty((n, 6), dtype=np.int64)
        for k, (axis, sign) in enumerate(NEIGHBOR_STEPS):
            off = [0, 0, 0]
            off[axis] = sign
            neighbors[:, k] = _shift(index3, off, -1)[mask3]
        super().__init__(h, coords, neighbors, interior3[mask3], core3[mask3])

        nb_in = lambda axis, sign: self._neighbor_flag(axis, sign, self.interior)
        nb_out = lambda axis, sign: self.neighbor(axis, sign) < 0
        b = self.boundary
        self.gamma_plus = _readonly(np.array([b & nb_in(i, -1) for i in range(3)]))
        self.gamma_minus = _readonly(np.array([b & nb_in(i, +1) for i in range(3)]))
        self.gamma_tilde_plus = _readonly(np.array([b & nb_out(i, +1) for i in range(3)]))
        self.gamma_tilde_minus = _readonly(np.array([b & nb_out(i, -1) for i in range(3)]))
        self.sublattice = _readonly(np.where(self.core, self.parity, 0))
        self._check_sublattices()

    def _neighbor_flag(self, axis, sign, flags):
        nb = self.neighbor(axis, sign)
        return np.where(nb >= 0, flags[np.maximum(nb, 0)], False)

    def index_of(self, z):
        """Ordinal of lattice index z, or -1 when z is not a grid point."""
        z = np.atleast_2d(np.asarray(z, dtype=np.int64)) - self.origin
        shape = np.asarray(self.index3.shape)
        ok = np.all((z >= 0) & (z < shape), axis=1)
        out = np.full(z.shape[0], -1, dtype=np.int64)
        zz = z[ok]
        out[ok] = self.index3[zz[:, 0], zz[:, 1], zz[:, 2]]
        return out

    def sublattice_members(self, j):
        return np.flatnonzero(self.sublattice == j)

    def mean_zero_sets(self):
        return [self.sublattice_members(j) for j in range(1, 9)]

    def _check_sublattices(self):
        for j in range(1, 9):
            members = self.sublattice_members(j)
            if members.size == 0:
                raise EmptyGrid(f"core sublattice {j} is empty at h={self.h}; refine h")
            local = np.full(self.n, -1, dtype=np.int64)
            local[members] = np.arange(members.size)
            rows, cols = [], []
            for axis in range(3):
                off = np.zeros(3, dtype=np.int64)
                off[axis] = 2
                nb = self.index_of(self.coords[members] + off)
                ok = nb >= 0
                ok[ok] &= self.sublattice[nb[ok]] == j
                rows.append(np.flatnonzero(ok))
                cols.append(local[nb[ok]])
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            adj = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(members.size,) * 2)
            ncomp, labels = connected_components(adj, directed=False)
            if ncomp > 1:
                sizes = sorted(np.bincount(labels).tolist(), reverse=True)
                raise DisconnectedSublattice(j, sizes)

    def point_class(self):
        """Per-point label: 'boundary', 'core_j' or 'interior'."""
        out = np.where(self.boundary, "boundary", "interior").astype(object)
        for j in range(1, 9):
            out[self.sublattice == j] = f"core_{j}"
        return out


class TorusGrid(LatticeGrid):
    periodic = True

    def __init__(self, N):
        N = int(N)
        self.N = N
        z = np.arange(N)
        coords = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1).reshape(-1, 3)
        neighbors = np.empty((N ** 3, 6), dtype=np.int64)
        for k, (axis, sign) in enumerate(NEIGHBOR_STEPS):
            zz = coords.copy()
            zz[:, axis] = (zz[:, axis] + sign) % N
            neighbors[:, k] = (zz[:, 0] * N + zz[:, 1]) * N + zz[:, 2]
        n = N ** 3
        super().__init__(1.0 / N, coords, neighbors, np.ones(n, bool), np.ones(n, bool))
        rows, cols = [], []
        for axis in range(3):
            zz = coords.copy()
            zz[:, axis] = (zz[:, axis] + 2) % N
            rows.append(np.arange(n))
            cols.append((zz[:, 0] * N + zz[:, 1]) * N + zz[:, 2])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        adj = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        self.n_components, labels = connected_components(adj, directed=False)
        self.components = _readonly(labels)

    def index_of(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.int64)) % self.N
        return (z[:, 0] * self.N + z[:, 1]) * self.N + z[:, 2]

    def mean_zero_sets(self):
        return [np.flatnonzero(self.components == c) for c in range(self.n_components)]

    def point_class(self):
        return np.array([f"core_{c + 1}" for c in self.components], dtype=object)


def _has_interior(mask3):
    inner = mask3.copy()
    for axis, sign in NEIGHBOR_STEPS:
        off = [0, 0, 0]
        off[axis] = sign
        inner &= _shift(mask3, off, False)
    return bool(inner.any())


def build_dirichlet_grid(spec: DomainSpec, h: float) -> DirichletGrid:
    if spec.kind == "torus":
        raise ValueError("use build_torus_grid for the torus")
    if not h > 0:
        raise ValueError("h must be positive")
    threshold = 2.0 * SQRT3 * h + 1e-12 * h
    lo, hi = spec.bounds()
    zlo = np.floor(lo / h).astype(np.int64)
    zhi = np.ceil(hi / h).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(zlo, zhi)]
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = Z.shape[:3]
    accept = spec._accept(h * Z.reshape(-1, 3).astype(float), threshold).reshape(shape)
    if not accept.any():
        raise EmptyGrid(f"no lattice point has its 4h-cube inside the domain at h={h}")
    pad = 3
    mask3 = np.zeros(tuple(s + 2 * pad for s in shape), dtype=bool)
    mask3[pad:-pad, pad:-pad, pad:-pad] = accept
    if not _has_interior(mask3):
        raise EmptyGrid(f"grid at h={h} has no interior points")
    return DirichletGrid(spec, h, zlo - pad, mask3)


def build_torus_grid(N: int) -> TorusGrid:
    if int(N) != N or N < 4:
        raise InvalidN(f"torus needs N >= 4, got {N!r}")
    return TorusGrid(int(N))


def build_grid(spec: DomainSpec, h: float | None = None):
    if spec.kind == "torus":
        return build_torus_grid(spec.N)
    return build_dirichlet_grid(spec, h)


@dataclass
class GapReport:
    h: float
    boundary_gap: float
    core_gap: float
    boundary_bound: float
    core_bound: float
    n_boundary: int
    n_core_boundary: int

    @property
    def ok(self):
        return self.boundary_gap <= self.boundary_bound and self.core_gap <= self.core_bound


def boundary_gap_report(grid: DirichletGrid, spec: DomainSpec) -> GapReport:
    pts = grid.points
    bpts = pts[grid.boundary]
    gap = float(np.max(np.abs(spec.sdf(bpts)))) if len(bpts) else 0.0
    core = grid.core
    is_edge = np.zeros(grid.n, dtype=bool)
    for k in range(6):
        nb = grid.neighbors[:, k]
        is_edge |= (nb < 0) | ~core[np.maximum(nb, 0)]
    core_edge = core & is_edge
    cpts = pts[core_edge]
    cgap = float(np.max(np.abs(spec.sdf(cpts)))) if len(cpts) else 0.0
    unit = 1.0 + 2.0 * SQRT3
    return GapReport(grid.h, gap, cgap, unit * grid.h, 2.0 * unit * grid.h,
                     int(len(bpts)), int(core_edge.sum()))
