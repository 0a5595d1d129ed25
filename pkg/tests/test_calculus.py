import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chorin.calculus import (VARIANTS, advect, diff, divergence, gradient, laplacian, operator_matrix,
                             summation_by_parts_residual)
from chorin.field import ScalarField, VectorField, inner, l2_norm
from chorin.grid import DomainSpec, build_dirichlet_grid, build_torus_grid

from conftest import cached_grid


def lookup(grid):
    """Naive neighbor read: dict from lattice coords to ordinal, wrap on the torus."""
    table = {tuple(z): k for k, z in enumerate(grid.coords.tolist())}
    N = getattr(grid, "N", None)

    def read(values, z):
        z = tuple(int(c) % N for c in z) if N else tuple(z)
        k = table.get(z)
        return 0.0 if k is None else values[k]
    return read


def naive_diff(grid, v, axis, variant):
    read = lookup(grid)
    e = np.eye(3, dtype=int)[axis]
    h = grid.h
    out = np.empty(grid.n)
    for k, z in enumerate(grid.coords):
        p, m, c = read(v, z + e), read(v, z - e), v[k]
        out[k] = {"forward": (p - c) / h, "backward": (c - m) / h,
                  "central": (p - m) / (2 * h), "second": (p + m - 2 * c) / h ** 2}[variant]
    return out


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("kind", ["ball", "torus"])
def test_diff_matches_naive(kind, variant, rng):
    g = cached_grid("ball", 0.12) if kind == "ball" else cached_grid("torus", 8)
    v = rng.standard_normal(g.n)
    for axis in range(3):
        got = diff(ScalarField(g, v), axis, variant).values
        assert np.allclose(got, naive_diff(g, v, axis, variant), rtol=1e-13, atol=1e-10)
        m = operator_matrix(g, variant, axis)
        assert np.allclose(m @ v, got, rtol=1e-13, atol=1e-10)


def test_constant_and_affine_far_from_boundary(ball12):
    g = ball12
    far = g.core
    one = ScalarField(g, np.ones(g.n))
    for variant in VARIANTS:
        for axis in range(3):
            assert not diff(one, axis, variant).values[far].any()
    x1 = ScalarField(g, g.points[:, 0])
    assert np.allclose(diff(x1, 0, "central").values[far], 1.0, atol=1e-12)
    a = np.array([0.3, -1.2, 2.0])
    grad = gradient(ScalarField(g, g.points @ a + 1.0)).values
    assert np.allclose(grad[far], a, atol=1e-12)
    sq = laplacian(ScalarField(g, g.points[:, 0] ** 2)).values
    assert np.allclose(sq[far], 2.0, atol=1e-9)


def test_forward_difference_at_edge_reads_zero(ball12):
    g = ball12
    one = ScalarField(g, np.ones(g.n))
    edge = g.neighbor(0, +1) < 0
    assert edge.any()
    assert np.allclose(diff(one, 0, "forward").values[edge], -1.0 / g.h)


def test_divergence_of_gradient_is_wide_laplacian(torus8, rng):
    g = torus8
    phi = rng.standard_normal(g.n)
    got = divergence(gradient(ScalarField(g, phi))).values
    read = lookup(g)
    expect = np.empty(g.n)
    for k, z in enumerate(g.coords):
        s = sum(read(phi, z + 2 * e) + read(phi, z - 2 * e) for e in np.eye(3, dtype=int))
        expect[k] = (s - 6 * phi[k]) / (4 * g.h ** 2)
    assert np.allclose(got, expect, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("grid_args", [("ball", 0.12), ("ball", 0.08), ("torus", 9)])
def test_summation_by_parts(grid_args, rng):
    g = cached_grid(*grid_args)
    for _ in range(50):
        u = VectorField(g, rng.standard_normal((g.n, 3)))
        phi = ScalarField(g, rng.standard_normal(g.n))
        bound = 1e-12 * l2_norm(u) * l2_norm(phi) / g.h
        assert abs(summation_by_parts_residual(u, phi)) <= bound
        # same identity with both sides assembled from the stencil matrices
        D = [operator_matrix(g, "central", i) for i in range(3)]
        lhs = sum(u.values[:, i] @ (D[i] @ phi.values) for i in range(3))
        rhs = sum((D[i] @ u.values[:, i]) @ phi.values for i in range(3))
        assert abs(lhs + rhs) * g.h ** 3 <= bound
    assert summation_by_parts_residual(VectorField.zeros(g), ScalarField(g, rng.standard_normal(g.n))) == 0.0


def test_sbp_on_ellipsoid(rng):
    g = build_dirichlet_grid(DomainSpec.ellipsoid((0, 0, 0), (1.0, 0.7, 0.5)), 0.06)
    u = VectorField(g, rng.standard_normal((g.n, 3)))
    phi = ScalarField(g, rng.standard_normal(g.n))
    lhs = inner(u, gradient(phi))
    rhs = -inner(divergence(u), phi)
    assert abs(lhs - rhs) <= 1e-12 * l2_norm(u) * l2_norm(phi) / g.h


@given(st.integers(0, 2 ** 31))
@settings(max_examples=10, deadline=None)
def test_telescoping_per_parity_class(seed):
    g = cached_grid("ball", 0.12)
    r = np.random.default_rng(seed)
    w = r.standard_normal((g.n, 3))
    w[g.boundary] = 0.0
    div = divergence(VectorField(g, w)).values
    scale = np.abs(w).sum() / g.h
    parity = (g.coords % 2) @ np.array([1, 2, 4])
    for cls in range(8):
        assert abs(div[parity == cls].sum()) <= 1e-12 * scale


def test_consistency_orders_on_torus():
    k = 2 * np.pi
    errs_c, errs_s = [], []
    Ns = (8, 16, 32)
    for N in Ns:
        g = build_torus_grid(N)
        x = g.points
        f = np.sin(k * x[:, 0]) * np.cos(k * x[:, 1]) + np.sin(k * x[:, 2])
        dfx = k * np.cos(k * x[:, 0]) * np.cos(k * x[:, 1])
        lap = -2 * k ** 2 * np.sin(k * x[:, 0]) * np.cos(k * x[:, 1]) - k ** 2 * np.sin(k * x[:, 2])
        errs_c.append(np.abs(diff(ScalarField(g, f), 0, "central").values - dfx).max())
        errs_s.append(np.abs(laplacian(ScalarField(g, f)).values - lap).max())
    h = 1.0 / np.array(Ns)
    for errs in (errs_c, errs_s):
        slope = np.polyfit(np.log(h), np.log(errs), 1)[0]
        assert abs(slope - 2.0) <= 0.3


def test_advect_zero_carrier(ball12, rng):
    w = VectorField(ball12, rng.standard_normal((ball12.n, 3)))
    assert not advect(VectorField.zeros(ball12), w).values.any()


def naive_advect(grid, c, w):
    read = lookup(grid)
    E = np.eye(3, dtype=int)
    h = grid.h
    out = np.zeros((grid.n, 3))
    for k, z in enumerate(grid.coords):
        if grid.boundary[k]:
            continue
        for j in range(3):
            for y in (z - E[j], z + E[j]):
                cj = read(c[:, j], y)
                for i in range(3):
                    dw = (read(w[:, i], y + E[j]) - read(w[:, i], y - E[j])) / (2 * h)
                    out[k, i] += 0.5 * cj * dw
    return out


def test_advect_single_point_hand_stencil():
    spec = DomainSpec.rounded_box((0, 0, 0), (0.6, 0.6, 0.6), 0.05)
    g = build_dirichlet_grid(spec, 0.05)
    at = lambda *z: g.index_of(np.array([z]))[0]
    c = np.zeros((g.n, 3))
    w = np.zeros((g.n, 3))
    c[at(0, 0, 0)] = [1.0, 2.0, 3.0]
    w[at(1, 0, 0)] = [4.0, 5.0, 6.0]
    got = advect(VectorField(g, c), VectorField(g, w)).values
    # only D_1 w(0) = w(e1)/(2h) is nonzero where the carrier lives, and it is
    # picked up by x = e1 and x = -e1, each with weight 1/2 c_1(0)
    expect = np.zeros((g.n, 3))
    for x in (at(1, 0, 0), at(-1, 0, 0)):
        expect[x] = 0.5 * 1.0 * np.array([4.0, 5.0, 6.0]) / (2 * g.h)
    assert np.array_equal(got, expect)
    assert np.allclose(got, naive_advect(g, c, w), atol=1e-12)


def test_advect_matches_naive_expansion(ball12, rng):
    c = rng.standard_normal((ball12.n, 3))
    w = rng.standard_normal((ball12.n, 3))
    got = advect(VectorField(ball12, c), VectorField(ball12, w)).values
    assert np.allclose(got, naive_advect(ball12, c, w), atol=1e-10)


def test_advect_skew_for_discretely_divergence_free(torus9, rng):
    # on the torus: a carrier that is a discrete curl has zero central divergence
    g = torus9
    from chorin.calculus import diff as d
    A = [ScalarField(g, rng.standard_normal(g.n)) for _ in range(3)]
    curl = np.stack([d(A[2], 1).values - d(A[1], 2).values,
                     d(A[0], 2).values - d(A[2], 0).values,
                     d(A[1], 0).values - d(A[0], 1).values], axis=1)
    carrier = VectorField(g, curl)
    assert np.abs(divergence(carrier).values).max() < 1e-10
    w = VectorField(g, rng.standard_normal((g.n, 3)))
    val = inner(advect(carrier, w), w)
    assert abs(val) <= 1e-12 * l2_norm(carrier) * l2_norm(w) ** 2 / g.h ** 2.5
