import math

import numpy as np
import pytest
from scipy import stats

from kac.errors import DegenerateInputError, KacError
from kac.kernels import KernelSpec, build_rate_table
from kac.moments import lambda_k
from kac.particle import (InitialDistribution, RecordMode, SimConfig, candidate_rate, empirical,
                          normalize_to_sphere, sample_initial, simulate)


def fourth_moment(velocities):
    return np.sum(velocities ** 2, axis=1) ** 2


def test_normalize_antipodal_pair():
    state = normalize_to_sphere(np.array([[3.5, 0.0, 0.0], [-3.5, 0.0, 0.0]]))
    assert np.allclose(state.velocities, [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], atol=1e-15)


def test_normalize_rejects_coincident_points():
    with pytest.raises(DegenerateInputError):
        normalize_to_sphere(np.ones((5, 3)))
    with pytest.raises(DegenerateInputError):
        normalize_to_sphere(np.ones((1, 3)))


@pytest.mark.parametrize("dist", list(InitialDistribution))
def test_sample_initial_lies_on_sphere(dist):
    state = sample_initial(dist, 200, 4, seed=3)
    momentum, energy = state.sphere_drift()
    assert momentum < 1e-12
    assert energy < 1e-12


def test_gaussian_fourth_moment():
    state = sample_initial(InitialDistribution.GAUSSIAN_ISO, 1000, 3, seed=11)
    m4 = fourth_moment(state.velocities)
    stderr = m4.std(ddof=1) / math.sqrt(m4.size)
    assert abs(m4.mean() - 5.0 / 3.0) <= 5.0 * stderr


def test_shell_fourth_moment_is_one():
    state = sample_initial(InitialDistribution.SHELL, 64, 3, seed=2)
    assert fourth_moment(state.velocities).mean() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("n", [3, 7, 65])
def test_shell_with_odd_count(n):
    state = sample_initial(InitialDistribution.SHELL, n, 3, seed=0)
    assert state.n == n
    assert np.allclose(np.linalg.norm(state.velocities, axis=1), 1.0, atol=1e-12)
    momentum, energy = state.sphere_drift()
    assert momentum < 1e-12 and energy < 1e-12


def test_shell_even_count_is_unchanged_by_odd_support():
    state = sample_initial(InitialDistribution.SHELL, 8, 3, seed=4)
    assert np.array_equal(state.velocities[:4], -state.velocities[4:])


def test_sample_initial_is_deterministic():
    a = sample_initial("two_temperature", 50, 3, seed=5, r=9.0)
    b = sample_initial("two_temperature", 50, 3, seed=5, r=9.0)
    c = sample_initial("two_temperature", 50, 3, seed=5, r=9.0, replica=1)
    assert np.array_equal(a.velocities, b.velocities)
    assert not np.array_equal(a.velocities, c.velocities)


def test_empirical_measure_view():
    state = sample_initial("gaussian_iso", 40, 3, seed=1)
    mu = empirical(state)
    assert mu.mass == 1.0
    assert np.allclose(mu.mean(), 0.0, atol=1e-14)
    assert mu.second_moment() == pytest.approx(1.0, rel=1e-13)
    assert np.shares_memory(mu.atoms, state.velocities)


def test_zero_horizon_leaves_state_unchanged(spec, table):
    state = sample_initial("gaussian_iso", 20, 3, seed=4)
    traj = simulate(state, spec, table, SimConfig(K=8.0, t_final=0.0))
    assert traj.candidates == 0 and traj.accepted == 0
    assert np.array_equal(traj.final.velocities, state.velocities)


def test_sim_config_rejects_bad_values():
    with pytest.raises(KacError):
        SimConfig(K=0.0, t_final=1.0)
    with pytest.raises(KacError):
        SimConfig(K=1.0, t_final=1.0, record=RecordMode.TRAJECTORY)
    with pytest.raises(KacError):
        SimConfig(K=1.0, t_final=1.0, cap_factor=1.5)


def test_simulate_rejects_dimension_mismatch(spec, table):
    state = sample_initial("gaussian_iso", 10, 4, seed=0)
    with pytest.raises(KacError):
        simulate(state, spec, table, SimConfig(K=1.0, t_final=0.1))


def test_simulate_conserves_and_respects_per_jump_bound(spec, table):
    state = sample_initial("two_temperature", 64, 3, seed=8)
    cfg = SimConfig(K=16.0, t_final=0.5, seed=8, track_moments=(4.0, 6.0))
    traj = simulate(state, spec, table, cfg)
    assert traj.accepted > 0
    momentum, energy = traj.final.sphere_drift()
    assert momentum <= 1e-9
    assert energy <= 1e-9
    assert traj.moment_violations == 0
    for k in (4.0, 6.0):
        assert traj.moment_trace.max_ratio(k) <= 2.0 ** (k / 2 + 1)
        assert traj.moment_trace.values(k)[-1] == pytest.approx(lambda_k(traj.final.velocities, k), rel=1e-10)


def test_simulate_is_reproducible(spec, table):
    state = sample_initial("gaussian_iso", 32, 3, seed=1)
    cfg = SimConfig(K=4.0, t_final=0.3, seed=99, record=RecordMode.EVENTS)
    first = simulate(state, spec, table, cfg)
    second = simulate(state, spec, table, cfg)
    assert first.events == second.events
    assert np.array_equal(first.final.velocities, second.final.velocities)
    other = simulate(state, spec, table, SimConfig(K=4.0, t_final=0.3, seed=99, replica=1))
    assert not np.array_equal(first.final.velocities, other.final.velocities)


def test_events_log_rejected_candidates(spec, table):
    state = sample_initial("gaussian_iso", 16, 3, seed=2)
    traj = simulate(state, spec, table, SimConfig(K=2.0, t_final=0.2, seed=2, record="events",
                                                  log_rejected=True))
    assert len(traj.events) == traj.candidates
    accepted = [e for e in traj.events if e.accepted]
    assert len(accepted) == traj.accepted
    assert all(0 < e.theta <= math.pi / 2 for e in accepted)
    assert all(math.isnan(e.theta) for e in traj.events if not e.accepted)
    assert all(e.i < e.j for e in traj.events)


def test_trajectory_snapshots_on_grid(spec, table):
    state = sample_initial("gaussian_iso", 16, 3, seed=3)
    traj = simulate(state, spec, table, SimConfig(K=2.0, t_final=1.0, seed=3, record="trajectory", dt=0.25))
    assert traj.times == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.array_equal(traj.snapshots[0], state.velocities)
    assert np.array_equal(traj.snapshots[-1], traj.final.velocities)


def test_candidate_rate_formula(spec):
    assert candidate_rate(spec, 10, 3.0) == pytest.approx(9 * 2.0 * math.pi * 3.0, rel=1e-15)


def test_two_particle_counts_are_poisson():
    spec = KernelSpec(d=3, gamma=0.0, nu=0.5)
    table = build_rate_table(spec, knots=512)
    state = normalize_to_sphere(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]))
    K, T, replicas = 1.0, 1.0, 500
    counts = np.array([simulate(state, spec, table, SimConfig(K=K, t_final=T, seed=17, replica=r)).accepted
                       for r in range(replicas)])
    mean = 2.0 * math.pi * K * T
    edges = list(range(3, 11))
    observed = [np.sum(counts < edges[0])]
    expected = [stats.poisson.cdf(edges[0] - 1, mean)]
    for k in edges[:-1]:
        observed.append(np.sum(counts == k))
        expected.append(stats.poisson.pmf(k, mean))
    observed.append(np.sum(counts >= edges[-1]))
    expected.append(stats.poisson.sf(edges[-1] - 1, mean))
    result = stats.chisquare(observed, replicas * np.asarray(expected))
    assert result.pvalue > 1e-3


def test_two_particle_acceptance_frequency():
    spec = KernelSpec(d=3, gamma=1.0, nu=0.5)
    table = build_rate_table(spec, knots=512)
    state = normalize_to_sphere(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]))
    candidates = accepted = 0
    for r in range(500):
        traj = simulate(state, spec, table, SimConfig(K=1.0, t_final=1.0, seed=23, replica=r))
        candidates += traj.candidates
        accepted += traj.accepted
    # |V^1 - V^2| = 2 throughout, against the cap 2 sqrt(2)
    assert stats.binomtest(accepted, candidates, 1.0 / math.sqrt(2.0)).pvalue > 1e-3


@pytest.mark.parametrize("cap_factor", [2.0, 4.0])
def test_inter_acceptance_times_are_exponential(spec, table, cap_factor):
    # an antipodal pair keeps |V^1 - V^2| = 2, so jumps form a Poisson process
    state = normalize_to_sphere(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]))
    K, T = 1.0, 200.0
    traj = simulate(state, spec, table, SimConfig(K=K, t_final=T, seed=31, record="events", cap_factor=cap_factor))
    times = np.array([e.t for e in traj.events])
    assert times.size == traj.accepted > 1000
    rate = spec.sphere_area * K * 2.0 ** spec.gamma
    result = stats.kstest(np.diff(np.concatenate([[0.0], times])), "expon", args=(0.0, 1.0 / rate))
    assert result.pvalue > 1e-3


def test_moment_trace_stays_on_snapshot_grid(spec, table):
    state = sample_initial("gaussian_iso", 32, 3, seed=6)
    final_only = simulate(state, spec, table, SimConfig(K=16.0, t_final=1.0, seed=6, track_moments=(4.0,)))
    assert final_only.accepted > 1000
    trace = final_only.moment_trace
    assert trace.times == [0.0, 1.0]
    assert trace.per_jump_ratios == {}
    assert trace.jumps == final_only.accepted
    assert trace.peak(4.0) >= max(trace.values(4.0))

    gridded = simulate(state, spec, table, SimConfig(K=16.0, t_final=1.0, seed=6, record="trajectory", dt=0.25,
                                                     track_moments=(4.0,)))
    assert gridded.moment_trace.times == gridded.times
    expected = [lambda_k(snap, 4.0) for snap in gridded.snapshots]
    assert np.allclose(gridded.moment_trace.values(4.0), expected, rtol=1e-10)


def test_full_moment_trace_is_opt_in(spec, table):
    state = sample_initial("gaussian_iso", 16, 3, seed=7)
    cfg = SimConfig(K=8.0, t_final=0.5, seed=7, track_moments=(4.0,), full_moment_trace=True)
    traj = simulate(state, spec, table, cfg)
    trace = traj.moment_trace
    assert len(trace.times) == traj.accepted + 1
    assert len(trace.per_jump_ratios[4.0]) == traj.accepted
    assert trace.max_ratio(4.0) == pytest.approx(max(trace.per_jump_ratios[4.0]), rel=1e-15)
    plain = simulate(state, spec, table, SimConfig(K=8.0, t_final=0.5, seed=7, track_moments=(4.0,)))
    assert np.array_equal(plain.final.velocities, traj.final.velocities)
    assert plain.moment_trace.peak(4.0) == trace.peak(4.0)


@pytest.mark.slow
def test_conservation_at_acceptance_size(spec, table):
    state = sample_initial("gaussian_iso", 256, 3, seed=0)
    traj = simulate(state, spec, table, SimConfig(K=64.0, t_final=1.0, seed=0, record="trajectory", dt=1 / 64,
                                                  track_moments=(4.0, 6.0)))
    assert traj.accepted > 5 * 10 ** 4
    for snap in traj.snapshots:
        assert np.linalg.norm(snap.sum(axis=0)) <= 1e-9 * 256
        assert abs(np.mean(np.sum(snap ** 2, axis=1)) - 1.0) <= 1e-9
    assert traj.moment_violations == 0
