import math

import numpy as np
import pytest

from scipy import stats

from kac.branching import (Environment, Population, SignedParticle, branch_simulate, estimate_fst, fit_growth,
                           freeze_growth_constant, growth_bound, growth_bound_holds, quadratic_weight, summarize)
from kac.errors import DegenerateInputError, KacError, PopulationExplosion
from kac.moments import lambda_k
from kac.particle import RecordMode, SimConfig, sample_initial, simulate


@pytest.fixture(scope="module")
def environment(spec, table):
    state = sample_initial("gaussian_iso", 64, 3, seed=21)
    traj = simulate(state, spec, table, SimConfig(K=8.0, t_final=1.0, seed=21,
                                                  record=RecordMode.TRAJECTORY, dt=0.125))
    return Environment.from_trajectory(traj, spec.gamma)


def unit_start(sign=1, t=0.0):
    return SignedParticle(np.array([1.0, 0.0, 0.0]), sign, t)


def test_signed_particle_rejects_bad_sign():
    with pytest.raises(KacError):
        SignedParticle(np.zeros(3), 0)


def test_environment_summary(environment):
    assert environment.d == 3
    assert len(environment.snapshots) == 9
    expected = max(lambda_k(atoms, 2.5) for atoms in environment.snapshots)
    assert environment.lambda_2_gamma_sup == pytest.approx(expected, rel=1e-14)
    assert environment.max_norm >= 1.0


def test_environment_lookup_is_piecewise_constant(environment):
    assert environment.index_at(0.0) == 0
    assert environment.index_at(0.124) == 0
    assert environment.index_at(0.125) == 1
    assert environment.index_at(5.0) == 8
    assert environment.at(0.3) is environment.snapshots[2]


def test_integrated_lambda(environment):
    assert environment.integrated_lambda(0.5, 0.5) == 0.0
    lambdas = [lambda_k(atoms, 2.5) for atoms in environment.snapshots]
    assert environment.integrated_lambda(0.0, 0.25) == pytest.approx(0.125 * (lambdas[0] + lambdas[1]), rel=1e-12)
    assert environment.integrated_lambda(0.0, 1.0) <= environment.lambda_2_gamma_sup * (1.0 + 1e-12)


def test_environment_requires_unit_energy():
    with pytest.raises(DegenerateInputError):
        Environment(times=[0.0], snapshots=[np.full((4, 3), 2.0)])
    with pytest.raises(DegenerateInputError):
        Environment(times=[0.0, 0.0], snapshots=[np.eye(3)[:2] * 1.0] * 2)


def test_zero_rate_keeps_start(environment, spec, table):
    for K, t in ((0.0, 1.0), (4.0, 0.0)):
        population = branch_simulate(environment, spec, table, K, unit_start(), t, seed=1)
        assert population.size == 1
        assert population.signed_mass == 1
        assert np.array_equal(population.velocities[0], [1.0, 0.0, 0.0])


def test_branch_bookkeeping(environment, spec, table):
    for replica in range(20):
        population = branch_simulate(environment, spec, table, 4.0, unit_start(), 0.5, seed=3, replica=replica)
        assert population.size == 1 + 2 * population.events
        assert population.size % 2 == 1
        assert abs(population.signed_mass) <= population.size
        assert np.all(population.births[:population.size] <= 0.5)


def test_population_explosion(environment, spec, table):
    with pytest.raises(PopulationExplosion):
        branch_simulate(environment, spec, table, 64.0, unit_start(), 1.0, seed=0, cap=5)


def test_branch_is_reproducible(environment, spec, table):
    first = branch_simulate(environment, spec, table, 4.0, unit_start(), 0.5, seed=8)
    second = branch_simulate(environment, spec, table, 4.0, unit_start(), 0.5, seed=8)
    assert first.size == second.size
    assert np.array_equal(first.velocities[:first.size], second.velocities[:second.size])


def test_branch_rejects_bad_arguments(environment, spec, table):
    with pytest.raises(KacError):
        branch_simulate(environment, spec, table, math.inf, unit_start(), 1.0, seed=0)
    with pytest.raises(KacError):
        branch_simulate(environment, spec, table, 1.0, SignedParticle(np.zeros(4)), 1.0, seed=0)


def test_estimate_at_start_time_is_exact(environment, spec, table):
    v = np.array([0.5, -1.0, 2.0])
    assert estimate_fst(environment, spec, table, 4.0, quadratic_weight, 0.3, 0.3, v, replicas=10, seed=0) \
        == pytest.approx(1.0 + v @ v)


def test_signed_mass_identity(environment, spec, table):
    mean, stderr = estimate_fst(environment, spec, table, 4.0, lambda x: np.ones(x.shape[0]), 0.0, 0.5,
                                [1.0, 0.0, 0.0], replicas=400, seed=5, return_stderr=True)
    assert abs(mean - 1.0) <= 3.0 * stderr + 1e-12


def test_population_integrals():
    population = Population(unit_start())
    population.append(np.array([0.0, 2.0, 0.0]), 1, 0.1)
    population.append(np.array([1.0, 0.0, 0.0]), -1, 0.1)
    assert population.signed_mass == 1
    assert population.signed_integral(quadratic_weight) == pytest.approx(2.0 + 5.0 - 2.0)
    assert population.unsigned_second_moment() == pytest.approx(9.0)
    assert [p.sign for p in population.particles()] == [1, 1, -1]
    summary = summarize(population)
    assert summary["size"] == 3 and summary["signed_mass"] == 1


def test_population_grows_past_capacity():
    population = Population(unit_start(), capacity=2)
    for k in range(10):
        population.append(np.full(3, float(k)), 1, 0.0)
    assert population.size == 11
    assert np.array_equal(population.velocities[10], np.full(3, 9.0))


def test_growth_bound_at_start(environment):
    assert growth_bound(environment, 4.0, 0.0, 0.0, [1.0, 1.0, 0.0], c=2.0) == pytest.approx(3.0)
    assert growth_bound(environment, 4.0, 0.0, 0.5, [1.0, 0.0, 0.0], c=1.0) > 2.0


def test_fit_growth():
    kt = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    fit = fit_growth(kt, 0.3 * kt + 0.1)
    assert fit["slope"] == pytest.approx(0.3, abs=1e-10)
    assert abs(fit["quadratic"]) < 1e-10
    assert fit_growth(kt, -0.05 * kt ** 2 + kt)["at_most_linear"]
    assert not fit_growth(kt, 0.05 * kt ** 2 + kt)["at_most_linear"]
    with pytest.raises(KacError):
        fit_growth(kt[:4], kt[:4])


def test_negative_start_mirrors_the_positive_population(environment, spec, table):
    for replica in range(5):
        up = branch_simulate(environment, spec, table, 4.0, unit_start(+1), 0.5, seed=9, replica=replica)
        down = branch_simulate(environment, spec, table, 4.0, unit_start(-1), 0.5, seed=9, replica=replica)
        assert up.size == down.size
        assert np.array_equal(up.velocities[:up.size], down.velocities[:down.size])
        assert np.array_equal(up.signs[:up.size], -down.signs[:down.size])
        assert down.signed_mass == -up.signed_mass == -1


def test_sign_symmetry_on_independent_replicas(environment, spec, table):
    def norms(sign, offset):
        pops = [branch_simulate(environment, spec, table, 2.0, unit_start(sign), 0.5, seed=10, replica=offset + r)
                for r in range(150)]
        return np.concatenate([np.linalg.norm(p.velocities[:p.size], axis=1) for p in pops])

    assert stats.ks_2samp(norms(+1, 0), norms(-1, 150)).pvalue > 1e-3


def synthetic_points(environment, c, spread=0.01):
    points = []
    for K in (1.0, 2.0, 4.0):
        for t in (0.25, 0.5, 1.0):
            mean = 2.0 * math.exp(c * K * environment.integrated_lambda(0.0, t))
            points.append({"K": K, "t": t, "unsigned_second_moment": mean,
                           "unsigned_second_moment_stderr": spread * mean})
    return points


def test_frozen_growth_constant_covers_its_pilot(environment):
    pilot = synthetic_points(environment, 0.5)
    c = freeze_growth_constant(environment, pilot, [1.0, 0.0, 0.0])
    assert c > 0.5
    holds, bounds = growth_bound_holds(environment, synthetic_points(environment, 0.5), [1.0, 0.0, 0.0], c)
    assert holds
    assert all(pt["unsigned_second_moment"] <= b for pt, b in zip(pilot, bounds))


def test_faster_growth_fails_the_frozen_bound(environment):
    c = freeze_growth_constant(environment, synthetic_points(environment, 0.5), [1.0, 0.0, 0.0])
    holds, _ = growth_bound_holds(environment, synthetic_points(environment, 1.0), [1.0, 0.0, 0.0], c)
    assert not holds


def test_flat_pilot_freezes_zero(environment):
    pilot = [{"K": 0.0, "t": 1.0, "unsigned_second_moment": 2.0, "unsigned_second_moment_stderr": math.nan},
             {"K": 2.0, "t": 0.5, "unsigned_second_moment": 1.5, "unsigned_second_moment_stderr": 0.1}]
    assert freeze_growth_constant(environment, pilot, [1.0, 0.0, 0.0]) == 0.0
