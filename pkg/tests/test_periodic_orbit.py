import math

import numpy as np
import pytest

from chorin.errors import NotConverged, SmallnessViolated
from chorin.field import VectorField, l2_norm, sample_time_average
from chorin.periodic_orbit import (PeriodicForcing, contraction_test, find_fixed_point, orbit_periodicity,
                                   time_one_map, uniqueness_probe)
from chorin.poincare import estimate_poincare_I, r0_bound
from chorin.scenarios import periodic_field
from chorin.stepper import Stepper

T1 = 10


@pytest.fixture(scope="module")
def setup(ball12):
    A = estimate_poincare_I(ball12).value
    st = Stepper(ball12, 1.0 / T1)
    base = PeriodicForcing(periodic_field(1.0, seed=3), ball12, T1)
    return ball12, A, st, base


def random_interior(grid, rng, norm):
    v = rng.standard_normal((grid.n, 3))
    v[grid.boundary] = 0.0
    u = VectorField(grid, v)
    return u * (norm / l2_norm(u))


def test_forcing_cache_is_periodic(setup):
    g, _, _, base = setup
    for n in range(T1):
        assert base.sample(n + T1) is base.sample(n)
        assert np.array_equal(base.sample(n + 3 * T1).values, base.sample(n).values)
    ref = sample_time_average(periodic_field(1.0, seed=3), g, 3 * (1.0 / T1), 1.0 / T1)
    assert np.array_equal(base.sample(3).values, ref.values)
    with pytest.raises(ValueError):
        PeriodicForcing(None, g, 0)
    with pytest.raises(ValueError):
        PeriodicForcing(None, g, 2.5)


def test_alpha_and_rescaling(setup):
    g, _, _, base = setup
    direct = math.sqrt(sum(l2_norm(base.sample(n)) ** 2 for n in range(T1)) / T1)
    assert base.alpha == pytest.approx(direct, rel=1e-14)
    assert base.with_alpha(0.25).alpha == pytest.approx(0.25, rel=1e-14)
    # a unit window of steps at any offset is one full period
    shifted = math.sqrt(sum(l2_norm(base.sample(n)) ** 2 for n in range(4, 4 + T1)) / T1)
    assert shifted == pytest.approx(base.alpha, rel=1e-12)


def test_zero_map_and_zero_fixed_point(setup):
    g, A, st, _ = setup
    zero = PeriodicForcing(None, g, T1)
    assert not time_one_map(VectorField.zeros(g), zero, st).values.any()
    u, rep = find_fixed_point(zero, st, A_hat=A)
    assert rep.iterations == 1 and not u.values.any() and rep.certified_small


def test_absorbing_ball_is_invariant(setup, rng):
    g, A, st, base = setup
    forcing = base.with_alpha(2.0)
    R0 = r0_bound(A, forcing.alpha)
    for R in (R0, 2 * R0):
        for _ in range(2):
            u0 = random_interior(g, rng, R)
            assert l2_norm(time_one_map(u0, forcing, st)) <= 1.05 * R


def test_map_is_lipschitz(setup, rng):
    g, _, st, base = setup
    forcing = base.with_alpha(0.5)
    u0 = random_interior(g, rng, 0.1)
    d = random_interior(g, rng, 1e-6)
    gap = l2_norm(time_one_map(u0 + d, forcing, st) - time_one_map(u0, forcing, st))
    # every step contracts differences in the small regime
    assert gap <= l2_norm(d)


def test_picard_converges_geometrically(setup):
    g, A, st, base = setup
    forcing = base.with_alpha(0.5)
    u, rep = find_fixed_point(forcing, st, tol=1e-10, A_hat=A)
    assert rep.residual <= 1e-10 and rep.certified_small
    assert rep.beta0 == pytest.approx(0.25 / A)
    h = rep.history
    assert all(b <= math.exp(-0.5 / A ** 2) * a for a, b in zip(h, h[1:]))
    check = orbit_periodicity(u, forcing, st, periods=2)
    assert check.max_gap <= 2e-10
    ua, rep_a = find_fixed_point(forcing, st, tol=1e-10, accel="anderson", m=3, A_hat=A)
    assert rep_a.method == "anderson" and l2_norm(ua - u) <= 1e-9


def test_fixed_point_norm_shrinks_with_forcing(setup):
    g, A, st, base = setup
    norms = []
    for eps in (1.0, 0.5, 0.25, 0.125):
        u, _ = find_fixed_point(base.with_alpha(0.5).scaled(eps), st, tol=1e-10, A_hat=A)
        norms.append(l2_norm(u))
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 0.2 * norms[0]


def test_not_converged_carries_best(setup):
    g, A, st, base = setup
    with pytest.raises(NotConverged) as exc:
        find_fixed_point(base, st, tol=1e-14, max_iter=1)
    assert exc.value.best is not None and len(exc.value.history) == 1
    with pytest.raises(ValueError):
        find_fixed_point(base, st, accel="newton")
    with pytest.raises(ValueError):
        find_fixed_point(base, st, accel="anderson", m=6)


def test_wrong_time_step_rejected(setup):
    g, _, _, base = setup
    with pytest.raises(ValueError):
        time_one_map(VectorField.zeros(g), base, Stepper(g, 0.05))


def test_contraction_closed_forms():
    tau, A = 0.1, 1.0
    bound = 1 / (1 + tau / A ** 2)
    assert bound == pytest.approx(0.90909, abs=5e-6)
    assert math.exp(-0.5 * tau / A ** 2) == pytest.approx(0.95123, abs=5e-6)
    assert math.exp(-0.5 * tau / A ** 2) >= bound


def test_contraction_identical_and_small(setup, rng):
    g, A, st, base = setup
    forcing = base.with_alpha(0.5)
    ua = VectorField.zeros(g)
    same = contraction_test(ua, ua, forcing, st, 5, A)
    assert same.norms == [0.0] * 6 and same.ratios == [] and same.ok
    ub = random_interior(g, rng, 0.05)
    rep = contraction_test(ua, ub, forcing, st, 20, A)
    assert rep.ok and rep.steps_used >= 1
    assert rep.step_bound == pytest.approx(1 / (1 + st.tau / A ** 2))
    assert all(r <= rep.step_bound * 1.05 for r in rep.ratios)


def test_contraction_requires_smallness(setup, rng):
    g, A, st, base = setup
    big = random_interior(g, rng, 50.0)
    with pytest.raises(SmallnessViolated) as exc:
        contraction_test(big, VectorField.zeros(g), base, st, 3, A)
    assert exc.value.beta0 == pytest.approx(0.25 / A)
    assert exc.value.max_abs >= exc.value.beta0


def test_uniqueness_probe(setup):
    g, A, st, base = setup
    zero = PeriodicForcing(None, g, T1)
    rep = uniqueness_probe(zero, st, k_starts=2, radius=0.2, periods=4, tol=1e-8,
                           reference=VectorField.zeros(g))
    assert rep.converged and not rep.divergent
    forcing = base.with_alpha(0.5)
    u, _ = find_fixed_point(forcing, st, tol=1e-10, A_hat=A)
    rep = uniqueness_probe(forcing, st, k_starts=3, radius=0.2, periods=8, tol=1e-8, reference=u)
    assert rep.converged
    assert rep.distances[-1] <= 1e-7
    # strictly decreasing until the distances reach round-off
    d = [0.2 * 2] + rep.distances
    assert all(b < a for a, b in zip(d, d[1:]) if a > 1e-14)
