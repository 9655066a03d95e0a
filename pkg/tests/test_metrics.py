import itertools
import math

import numpy as np
import pytest

from kac.errors import AssignmentTooLarge, ParameterError, SizeMismatchError
from kac.measure import EmpiricalMeasure
from kac.metrics import (EXACT_LIMIT, W_p, auction_assignment, check_comparisons, d_p, d_p_cost_matrix,
                         delta_p, lipschitz_lower_bound, w1, w2, w_p)

E1 = np.array([1.0, 0.0, 0.0])


def cloud(rng, n=8, d=3, scale=1.0):
    return EmpiricalMeasure(scale * rng.standard_normal((n, d)))


def test_d_p_values():
    v, w = np.array([0.3, -1.2, 0.5]), np.array([2.0, 0.1, -0.4])
    assert d_p(v, v, 6.0) == 0.0
    assert d_p(E1, np.zeros(3), 2.0) == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert d_p(v, w, 0.0) == pytest.approx(math.sqrt(3.0) * np.linalg.norm(v - w), rel=1e-15)
    assert d_p(np.zeros(3), E1, 0.0) == pytest.approx(math.sqrt(3.0), rel=1e-15)
    with pytest.raises(ParameterError):
        d_p(v, w, -1.0)


def test_delta_p_is_comparable_to_d_p(rng):
    ratios = []
    for _ in range(500):
        v, w = rng.standard_normal(3) * 2.0, rng.standard_normal(3) * 2.0
        ratios.append(delta_p(v, w, 4.0) / d_p(v, w, 4.0))
    assert 0.1 < min(ratios) and max(ratios) < 10.0


def test_cost_matrix_matches_pointwise(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    cost = d_p_cost_matrix(a, b, 3.0)
    for i, j in itertools.product(range(5), range(4)):
        assert cost[i, j] == pytest.approx(d_p(a[i], b[j], 3.0) ** 2, rel=1e-12)


def test_W_p_of_equal_clouds_is_zero(rng):
    mu = cloud(rng)
    assert W_p(mu, EmpiricalMeasure(mu.atoms[::-1].copy()), 4.0) == pytest.approx(0.0, abs=1e-12)


def test_W_p_single_atoms():
    v, w = np.array([[0.5, 0.2, -0.1]]), np.array([[-1.0, 0.4, 0.3]])
    assert W_p(EmpiricalMeasure(v), EmpiricalMeasure(w), 6.0) == pytest.approx(d_p(v[0], w[0], 6.0), rel=1e-14)


def test_W_p_matches_permutation_enumeration(rng):
    mu, nu = cloud(rng, n=6), cloud(rng, n=6)
    cost = d_p_cost_matrix(mu.atoms, nu.atoms, 4.0)
    best = min(cost[np.arange(6), list(perm)].mean() for perm in itertools.permutations(range(6)))
    assert W_p(mu, nu, 4.0) == pytest.approx(math.sqrt(best), rel=1e-12)


def test_W_p_is_symmetric(rng):
    mu, nu = cloud(rng), cloud(rng)
    assert W_p(mu, nu, 8.0) == pytest.approx(W_p(nu, mu, 8.0), rel=1e-12)


def test_w1_two_atom_example():
    mu = EmpiricalMeasure(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    nu = EmpiricalMeasure(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    assert w1(mu, nu) == pytest.approx(0.5, rel=1e-15)
    assert w2(mu, nu) == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert w1(mu, mu) == 0.0


def test_w_p_rejects_small_exponent(rng):
    with pytest.raises(ParameterError):
        w_p(cloud(rng), cloud(rng), 0.5)


def test_size_mismatch(rng):
    with pytest.raises(SizeMismatchError):
        W_p(cloud(rng, n=4), cloud(rng, n=5), 2.0)


def test_exact_assignment_size_limit():
    big = EmpiricalMeasure(np.zeros((EXACT_LIMIT + 1, 1)))
    with pytest.raises(AssignmentTooLarge):
        W_p(big, big, 2.0)


def test_auction_is_near_optimal(rng):
    mu, nu = cloud(rng, n=40), cloud(rng, n=40)
    exact = W_p(mu, nu, 4.0) ** 2
    approx = W_p(mu, nu, 4.0, exact=False) ** 2
    cost = d_p_cost_matrix(mu.atoms, nu.atoms, 4.0)
    assert exact <= approx * (1.0 + 1e-12)
    assert approx - exact <= 1e-5 * float(np.ptp(cost))
    _, cols = auction_assignment(cost)
    assert sorted(cols) == list(range(40))


def test_lipschitz_lower_bound_below_w1(rng):
    mu, nu = cloud(rng, n=20), cloud(rng, n=20, scale=2.0)
    assert lipschitz_lower_bound(mu, nu, rng) <= w1(mu, nu) + 1e-12


def test_comparisons_on_equal_clouds(rng):
    mu = cloud(rng)
    report = check_comparisons(mu, mu, mu, p=4.0, p_prime=8.0)
    assert report.lower_holds and report.upper_holds
    assert report.W_p == 0.0


def test_comparisons_on_random_triples(rng):
    worst_triangle = 0.0
    for _ in range(100):
        mu, nu, xi = cloud(rng), cloud(rng, scale=1.5), cloud(rng, scale=0.7)
        report = check_comparisons(mu, nu, xi, p=4.0, p_prime=8.0)
        assert report.lower_holds
        assert report.alpha == pytest.approx(2.0 / 16.0)
        worst_triangle = max(worst_triangle, report.triangle_ratio)
    assert worst_triangle <= 4.0


def test_comparisons_need_large_p_prime(rng):
    with pytest.raises(ParameterError):
        check_comparisons(cloud(rng), cloud(rng), cloud(rng), p=4.0, p_prime=6.0)


@pytest.mark.slow
def test_W_p_matches_enumeration_on_many_instances(rng):
    for _ in range(200):
        n = int(rng.integers(1, 8))
        mu, nu = cloud(rng, n=n), cloud(rng, n=n)
        cost = d_p_cost_matrix(mu.atoms, nu.atoms, 4.0)
        best = min(cost[np.arange(n), list(perm)].mean() for perm in itertools.permutations(range(n)))
        assert W_p(mu, nu, 4.0) == pytest.approx(math.sqrt(best), rel=1e-12)


def test_w1_below_W_p(rng):
    for _ in range(200):
        mu, nu = cloud(rng, n=6), cloud(rng, n=6, scale=1.3)
        assert w1(mu, nu) <= W_p(mu, nu, 4.0) * (1.0 + 1e-12)


def test_W_p_ignores_atom_order(rng):
    for _ in range(20):
        a, b = rng.standard_normal((9, 3)), 1.2 * rng.standard_normal((9, 3))
        base = W_p(EmpiricalMeasure(a), EmpiricalMeasure(b), 4.0)
        shuffled = W_p(EmpiricalMeasure(a[rng.permutation(9)]), EmpiricalMeasure(b[rng.permutation(9)]), 4.0)
        assert shuffled == pytest.approx(base, rel=1e-12)
        assert W_p(EmpiricalMeasure(b), EmpiricalMeasure(a), 4.0) == pytest.approx(base, rel=1e-12)


def test_d_p_is_symmetric_and_rotation_invariant(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    for _ in range(50):
        v, w = rng.standard_normal(3), rng.standard_normal(3)
        assert d_p(v, w, 6.0) == pytest.approx(d_p(w, v, 6.0), rel=1e-15)
        assert d_p(q @ v, q @ w, 6.0) == pytest.approx(d_p(v, w, 6.0), rel=1e-12)
