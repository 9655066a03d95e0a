import math

import numpy as np
import pytest

from kac.errors import KernelDomainError, MissingMomentError
from kac.moments import (MomentTrace, MomentTracker, abs_moment, concentration_experiment, exceeds_level,
                         lambda_k, lambda_k_pair, lambda_p_coefficient, lambda_p_coefficient_check,
                         povzner_beta, stopping_time_Tb, sup_moment_excess)
from kac.particle import SimConfig, sample_initial


def test_lambda_zero_order_is_one(rng):
    assert lambda_k(rng.standard_normal((10, 3)), 0.0) == 1.0


def test_lambda_at_origin_is_one():
    atoms = np.zeros((4, 3))
    for k in (0.0, 2.0, 4.5, 12.0):
        assert lambda_k(atoms, k) == 1.0


def test_lambda_two_on_sphere_is_two():
    state = sample_initial("gaussian_iso", 100, 3, seed=0)
    assert lambda_k(state.velocities, 2.0) == pytest.approx(2.0, rel=1e-14)


def test_lambda_is_monotone_in_order(rng):
    atoms = rng.standard_normal((50, 3))
    values = [lambda_k(atoms, k) for k in (0.0, 1.0, 2.0, 4.0, 6.0, 8.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_lambda_pair_and_abs_moment():
    small, large = np.zeros((2, 3)), np.full((2, 3), 2.0)
    assert lambda_k_pair(small, large, 2.0) == lambda_k(large, 2.0)
    assert abs_moment(np.array([[3.0, 4.0, 0.0]]), 2.0) == pytest.approx(25.0)
    with pytest.raises(KernelDomainError):
        lambda_k(small, -1.0)


def test_tracker_matches_recomputation(rng):
    V = rng.standard_normal((20, 3))
    tracker = MomentTracker(V, (4.0,))
    for step in range(1, 50):
        i, j = 2, 7
        old_i, old_j = V[i].copy(), V[j].copy()
        a = 0.1 * rng.standard_normal(3)
        V[i] += a
        V[j] -= a
        tracker.update(V, i, j, old_i, old_j, float(step))
    assert tracker.current(4.0) == pytest.approx(lambda_k(V, 4.0), rel=1e-12)
    # only the starting value is stored until record() is called
    assert len(tracker.trace.times) == 1
    tracker.record(50.0)
    assert tracker.trace.values(4.0)[-1] == pytest.approx(lambda_k(V, 4.0), rel=1e-12)


def test_tracker_running_extremes_without_full_trace(rng):
    V = rng.standard_normal((10, 3))
    tracker = MomentTracker(V, (4.0, 6.0))
    values, ratios = [lambda_k(V, 6.0)], []
    for step in range(200):
        old_i, old_j = V[0].copy(), V[1].copy()
        a = 0.3 * rng.standard_normal(3)
        V[0] += a
        V[1] -= a
        before = values[-1]
        tracker.update(V, 0, 1, old_i, old_j, float(step))
        values.append(lambda_k(V, 6.0))
        ratios.append(values[-1] / before)
    trace = tracker.finish()
    assert trace.jumps == 200
    assert trace.lambda_k[6.0] == [values[0]]
    assert trace.per_jump_ratios == {}
    assert trace.peak(6.0) == pytest.approx(max(values), rel=1e-10)
    assert trace.max_ratio(6.0) == pytest.approx(max(ratios), rel=1e-10)


def test_tracker_full_trace_keeps_every_jump(rng):
    V = rng.standard_normal((8, 3))
    tracker = MomentTracker(V, (4.0,), full_trace=True)
    for step in range(1, 30):
        old_i, old_j = V[3].copy(), V[5].copy()
        a = 0.1 * rng.standard_normal(3)
        V[3] += a
        V[5] -= a
        tracker.update(V, 3, 5, old_i, old_j, float(step))
    trace = tracker.finish()
    assert trace.times == [float(s) for s in range(30)]
    assert len(trace.per_jump_ratios[4.0]) == 29
    assert trace.values(4.0)[-1] == pytest.approx(lambda_k(V, 4.0), rel=1e-12)
    assert trace.max_ratio(4.0) == pytest.approx(max(trace.per_jump_ratios[4.0]), rel=1e-15)


def test_exceeds_level_uses_peak_between_records():
    trace = MomentTrace(times=[0.0, 1.0], lambda_k={4.0: [3.0, 3.1]}, peaks={4.0: 5.0})
    assert stopping_time_Tb(trace, 4.0, 8.0 * 4.0) == math.inf
    assert exceeds_level(trace, 4.0, 8.0 * 4.0)
    assert not exceeds_level(trace, 4.0, 8.0 * 5.0)


def test_stopping_time():
    trace = MomentTrace(times=[0.0, 1.0, 2.0], lambda_k={4.0: [3.0, 3.5, 5.0]})
    # threshold b / 2^{3}
    assert stopping_time_Tb(trace, 4.0, 1e9) == math.inf
    assert stopping_time_Tb(trace, 4.0, 8.0 * 3.0 * 0.99) == 0.0
    assert stopping_time_Tb(trace, 4.0, 8.0 * 4.0) == 2.0
    with pytest.raises(KernelDomainError):
        stopping_time_Tb(trace, 4.0, 1.0)
    with pytest.raises(MissingMomentError):
        stopping_time_Tb(trace, 6.0, 100.0)


def test_povzner_beta_values():
    assert povzner_beta(4.0, math.pi / 2) == pytest.approx(0.5, rel=1e-15)
    assert povzner_beta(4.0, 1e-6) < 1e-4
    with pytest.raises(KernelDomainError):
        povzner_beta(2.0, 1.0)
    with pytest.raises(KernelDomainError):
        povzner_beta(4.0, 0.0)


@pytest.mark.parametrize("p", [4.0, 6.0, 8.0, 12.0])
def test_povzner_beta_is_positive(p):
    theta = np.linspace(0.0, math.pi / 2, 10 ** 4 + 1)[1:]
    assert np.all(povzner_beta(p, theta) > 0)


def test_lambda_p_coefficient(spec, table):
    values = [lambda_p_coefficient(spec, table, p) for p in (2.0, 4.0, 8.0, 16.0, 64.0)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] > 10.0 * values[1]
    for p in (4.0, 8.0):
        assert lambda_p_coefficient(spec, table, p) == pytest.approx(lambda_p_coefficient_check(spec, p),
                                                                     rel=1e-8)
    with pytest.raises(KernelDomainError):
        lambda_p_coefficient(spec, table, 1.0)


def test_sup_moment_excess():
    still = [np.ones((3, 3))] * 4
    assert not sup_moment_excess(still, 4.0, 0.5)
    moved = still + [np.full((3, 3), 2.0)]
    assert sup_moment_excess(moved, 4.0, 0.5)


def test_concentration_needs_one_level(spec, table):
    cfg = SimConfig(K=4.0, t_final=0.1)
    with pytest.raises(KernelDomainError):
        concentration_experiment(spec, table, cfg, p=4.0, replicas=2, n_values=(16,))
    with pytest.raises(KernelDomainError):
        concentration_experiment(spec, table, cfg, p=4.0, b=10.0, b_factor=2.0, replicas=2, n_values=(16,))


def test_concentration_extreme_levels(spec, table):
    cfg = SimConfig(K=4.0, t_final=0.1)
    below = concentration_experiment(spec, table, cfg, p=4.0, b_factor=0.5, replicas=4, n_values=(16, 32))
    assert below.exceedance == [1.0, 1.0]
    above = concentration_experiment(spec, table, cfg, p=4.0, b=1e12, replicas=4, n_values=(16, 32))
    assert above.exceedance == [0.0, 0.0]
    assert above.nonincreasing
    assert above.fitted_exponent is None


@pytest.mark.slow
def test_concentration_decreases_with_N(spec, table):
    cfg = SimConfig(K=16.0, t_final=1.0)
    report = concentration_experiment(spec, table, cfg, p=4.0, b_factor=8.0, replicas=100)
    assert report.nonincreasing
