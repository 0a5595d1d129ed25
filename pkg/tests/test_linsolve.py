import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from chorin.errors import NotConverged
from chorin.field import VectorField
from chorin.linsolve import canonical, cg_deflated, krylov_nonsym, relative_residual
from chorin.stepper import Stepper


def periodic_laplacian_1d(N):
    A = 2 * np.eye(N) - np.roll(np.eye(N), 1, axis=1) - np.roll(np.eye(N), -1, axis=1)
    return canonical(A)


def test_cg_periodic_laplacian_matches_pseudoinverse():
    N = 8
    A = periodic_laplacian_1d(N)
    b = np.sin(2 * np.pi * np.arange(N) / N) + 0.3
    x, rep = cg_deflated(A, b, null_basis=np.ones(N), tol=1e-13)
    # oracle: pseudoinverse from the dense eigendecomposition
    w, V = np.linalg.eigh(A.toarray())
    keep = w > 1e-10
    pinv = V[:, keep] @ np.diag(1 / w[keep]) @ V[:, keep].T
    assert np.allclose(x, pinv @ b, atol=1e-10)
    assert abs(x.sum()) < 1e-12
    assert rep.converged and rep.residual <= 1e-13


def test_cg_kernel_rhs_gives_zero():
    A = periodic_laplacian_1d(8)
    x, rep = cg_deflated(A, np.full(8, 2.5), null_basis=np.ones(8))
    assert not x.any() and rep.iterations == 0


def test_cg_identity_one_iteration(rng):
    b = rng.standard_normal(20)
    x, rep = cg_deflated(sp.identity(20, format="csr"), b)
    assert np.allclose(x, b, rtol=1e-15) and rep.iterations == 1


def test_cg_cap_raises():
    A = canonical(sp.diags(np.linspace(1, 1e6, 400)))
    with pytest.raises(NotConverged) as exc:
        cg_deflated(A, np.ones(400), tol=1e-14, cap=3)
    assert exc.value.iterations == 3 and exc.value.residual > 1e-14


def test_krylov_identity():
    b = np.arange(1.0, 11.0)
    x, rep = krylov_nonsym(sp.identity(10, format="csr"), b)
    assert np.allclose(x, b, rtol=1e-14)


def test_krylov_diagonally_dominant_matches_lu(rng):
    n = 50
    M = rng.standard_normal((n, n))
    M += np.diag(np.abs(M).sum(axis=1) + 1.0)
    b = rng.standard_normal(n)
    x, rep = krylov_nonsym(canonical(M), b, tol=1e-12)
    assert np.allclose(x, sla.lu_solve(sla.lu_factor(M), b), atol=1e-9)
    assert abs(rep.residual - relative_residual(canonical(M), x, b)) <= 1e-14


def test_krylov_multiple_rhs(rng):
    n = 30
    M = np.eye(n) * 4 + 0.5 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, 3))
    X, rep = krylov_nonsym(canonical(M), B, tol=1e-12)
    assert np.allclose(M @ X, B, atol=1e-10)


@pytest.mark.parametrize("ratio", [10.0, 100.0])
def test_momentum_matrix_large_tau_converges(ball12, ratio, rng):
    tau = ratio * ball12.h ** 2
    st = Stepper(ball12, tau, 1.0)
    u = rng.standard_normal((ball12.n, 3))
    u[ball12.boundary] = 0.0
    state = st.initial_state(VectorField(ball12, u))
    A = st.momentum_matrix(state.u)
    b = rng.standard_normal(A.shape[0])
    x, rep = krylov_nonsym(A, b, tol=1e-12)
    assert rep.converged and rep.residual <= 1e-12
    assert abs(rep.residual - relative_residual(A, x, b)) <= 1e-14
    print(f"tau/h^2={ratio}: {rep.iterations} iterations via {rep.method}")


def test_krylov_deterministic(rng):
    n = 200
    A = canonical(sp.random(n, n, density=0.05, random_state=3) + 3 * sp.identity(n))
    b = rng.standard_normal(n)
    x1, _ = krylov_nonsym(A, b, tol=1e-12)
    x2, _ = krylov_nonsym(A, b, tol=1e-12)
    assert np.array_equal(x1, x2)
    y1, _ = cg_deflated(canonical(A @ A.T), b, tol=1e-12)
    y2, _ = cg_deflated(canonical(A @ A.T), b, tol=1e-12)
    assert np.array_equal(y1, y2)


def test_canonical_form():
    A = sp.coo_matrix(([1.0, 0.0, 2.0, 3.0], ([1, 0, 1, 1], [2, 0, 0, 2])), shape=(3, 3))
    C = canonical(A)
    assert C.nnz == 2 and C.has_sorted_indices
    assert C[1, 2] == 4.0
