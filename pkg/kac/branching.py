"""
Signed linearised Kac process: a branching particle system driven by a
frozen environment rho_t.

A particle (v, s) collides with an environment atom v_star at the cutoff
rate and is replaced by (v', s), (v'_star, s) and (v_star, -s). Signed mass
is conserved event by event; unsigned mass grows by 2 per event.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from kac.errors import DegenerateInputError, KacError, PopulationExplosion
from kac.geometry import displacement_at_angle, uniform_azimuth
from kac.kernels import KernelSpec, RateTable
from kac.moments import lambda_k
from kac.rng import make_rng

logger = logging.getLogger(__name__)

POPULATION_CAP = 10 ** 6
ENVIRONMENT_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class SignedParticle:
    v: np.ndarray
    sign: int = 1
    birth_time: float = 0.0

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise KacError(f"sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass
class Environment:
    """Piecewise-constant rho_t: snapshot k holds on [times[k], times[k+1])."""
    times: np.ndarray
    snapshots: List[np.ndarray]
    gamma: float = 0.5
    lambda_2_gamma_sup: float = field(init=False)
    max_norm: float = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.snapshots) == 0 or len(self.snapshots) != self.times.size:
            raise DegenerateInputError("environment needs one snapshot per time and at least one snapshot")
        if np.any(np.diff(self.times) <= 0):
            raise DegenerateInputError("environment times must be strictly increasing")
        for t, atoms in zip(self.times, self.snapshots):
            second = float(np.einsum("ij,ij->", atoms, atoms) / atoms.shape[0])
            if abs(second - 1.0) > ENVIRONMENT_TOLERANCE:
                raise DegenerateInputError(f"snapshot at t={t:.6g} has second moment {second:.12g}, not 1")
        self._lambdas = np.array([lambda_k(atoms, 2.0 + self.gamma) for atoms in self.snapshots])
        self.lambda_2_gamma_sup = float(self._lambdas.max())
        self.max_norm = max(float(np.linalg.norm(atoms, axis=1).max()) for atoms in self.snapshots)

    @classmethod
    def from_trajectory(cls, trajectory, gamma: float) -> "Environment":
        if not trajectory.snapshots:
            raise DegenerateInputError("trajectory carries no snapshots; record it in trajectory mode")
        return cls(times=np.asarray(trajectory.times), snapshots=list(trajectory.snapshots), gamma=gamma)

    @property
    def d(self) -> int:
        return self.snapshots[0].shape[1]

    def index_at(self, t: float) -> int:
        return max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)

    def at(self, t: float) -> np.ndarray:
        return self.snapshots[self.index_at(t)]

    def integrated_lambda(self, s: float, t: float) -> float:
        """int_s^t Lambda_{2+gamma}(rho_r) dr for the piecewise-constant flow."""
        if t <= s:
            return 0.0
        edges = np.append(self.times, math.inf)
        lo = np.clip(edges[:-1], s, t)
        hi = np.clip(edges[1:], s, t)
        total = float(np.sum((hi - lo) * self._lambdas))
        # before the first snapshot the first snapshot applies
        if s < self.times[0]:
            total += (min(t, self.times[0]) - s) * self._lambdas[0]
        return total


class Population:
    """Growable arrays of velocities, signs and birth times."""

    def __init__(self, start: SignedParticle, capacity: int = 64):
        d = start.v.size
        self.velocities = np.empty((capacity, d))
        self.signs = np.empty(capacity, dtype=np.int8)
        self.births = np.empty(capacity)
        self.size = 0
        self.time = start.birth_time
        self.events = 0
        self.append(start.v, start.sign, start.birth_time)

    def append(self, v: np.ndarray, sign: int, birth: float) -> None:
        if self.size == self.signs.size:
            grow = self.signs.size
            self.velocities = np.concatenate([self.velocities, np.empty_like(self.velocities[:grow])])
            self.signs = np.concatenate([self.signs, np.empty_like(self.signs[:grow])])
            self.births = np.concatenate([self.births, np.empty_like(self.births[:grow])])
        self.velocities[self.size] = v
        self.signs[self.size] = sign
        self.births[self.size] = birth
        self.size += 1

    def particles(self) -> List[SignedParticle]:
        return [SignedParticle(self.velocities[k].copy(), int(self.signs[k]), float(self.births[k]))
                for k in range(self.size)]

    def signed_integral(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """<f, Xi_t> = sum_k s_k f(v_k)."""
        return float(np.sum(self.signs[:self.size] * f(self.velocities[:self.size])))

    def unsigned_integral(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """<f, Xi*_t> = sum_k f(v_k)."""
        return float(np.sum(f(self.velocities[:self.size])))

    @property
    def signed_mass(self) -> int:
        return int(np.sum(self.signs[:self.size], dtype=np.int64))

    def unsigned_second_moment(self) -> float:
        return self.unsigned_integral(quadratic_weight)


def quadratic_weight(v: np.ndarray) -> np.ndarray:
    """1 + |v|^2 per row."""
    return 1.0 + np.einsum("ij,ij->i", v, v)


def branch_simulate(env: Environment, spec: KernelSpec, table: RateTable, K: float, start: SignedParticle,
                    t_final: float, seed: int, replica: int = 0, cap: int = POPULATION_CAP) -> Population:
    """
    Evolve the population started from ``start`` at ``start.birth_time`` up
    to the absolute time ``t_final``.

    Candidates run at a population-wide majorant: every particle carries rate
    2 |S^{d-2}| K x_cap^gamma with x_cap = max particle norm + max atom norm,
    the partner is uniform among the current atoms, and the candidate fires
    iff z <= K |v - v_star|^gamma.
    """
    if not math.isfinite(K) or K < 0:
        raise KacError(f"linearised process needs a finite cutoff, got K={K}")
    if start.v.size != env.d:
        raise KacError(f"start velocity has dimension {start.v.size}, environment has {env.d}")
    population = Population(start)
    t = start.birth_time
    if K == 0 or t_final <= t:
        population.time = max(t, t_final)
        return population

    rng = make_rng(seed, replica, stream=2)
    gamma, d = spec.gamma, env.d
    top_norm = float(np.linalg.norm(start.v))
    while True:
        z_cap = K * (top_norm + env.max_norm) ** gamma
        per_particle = 2.0 * spec.sphere_area * z_cap
        t += rng.exponential(1.0 / (per_particle * population.size))
        if t > t_final:
            break
        k = int(rng.integers(population.size))
        atoms = env.at(t)
        v_star = atoms[int(rng.integers(atoms.shape[0]))].copy()
        z = z_cap * (1.0 - rng.random())
        phi = uniform_azimuth(rng, d)
        v = population.velocities[k]
        u = v - v_star
        x = math.sqrt(u @ u)
        if x == 0.0 or z > K * x ** gamma:
            continue
        a = displacement_at_angle(u, table.invert(z / x ** gamma), phi)
        sign = int(population.signs[k])
        v_new, v_star_new = v + a, v_star - a
        population.velocities[k] = v_new
        population.births[k] = t
        population.append(v_star_new, sign, t)
        population.append(v_star, -sign, t)
        population.events += 1
        top_norm = max(top_norm, float(np.linalg.norm(v_new)), float(np.linalg.norm(v_star_new)),
                       float(np.linalg.norm(v_star)))
        if population.size > cap:
            logger.error(f"Population explosion: {population.size} particles at t={t:.6g} (cap {cap})")
            raise PopulationExplosion(f"population reached {population.size} > {cap} at t={t:.6g}")

    population.time = t_final
    logger.debug(f"branch_simulate: K={K} events={population.events} size={population.size}")
    return population


def estimate_fst(env: Environment, spec: KernelSpec, table: RateTable, K: float,
                 f: Callable[[np.ndarray], np.ndarray], s: float, t: float, v: Sequence[float],
                 replicas: int, seed: int, sign: int = 1, return_stderr: bool = False):
    """
    Monte Carlo mean of <f, Xi_t> over ``replicas`` populations started from
    (v, sign) at time s. ``f`` maps an (M, d) array to M values.
    """
    start = SignedParticle(np.asarray(v, dtype=float), sign, s)
    if t <= s:
        exact = float(sign * f(start.v[None, :])[0])
        return (exact, 0.0) if return_stderr else exact
    if replicas < 1:
        raise KacError(f"need at least one replica, got {replicas}")
    values = np.array([
        branch_simulate(env, spec, table, K, start, t, seed, replica=r).signed_integral(f)
        for r in range(replicas)
    ])
    mean = float(values.mean())
    if not return_stderr:
        return mean
    stderr = float(values.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.nan
    return mean, stderr


def growth_bound(env: Environment, K: float, s: float, t: float, v: Sequence[float], c: float) -> float:
    """exp(c K int_s^t Lambda_{2+gamma}(rho_r) dr) (1 + |v|^2)."""
    v = np.asarray(v, dtype=float)
    return math.exp(c * K * env.integrated_lambda(s, t)) * (1.0 + float(v @ v))


def freeze_growth_constant(env: Environment, points: Sequence[dict], v: Sequence[float],
                           sigmas: float = 2.0) -> float:
    """
    Smallest c >= 0 putting mean + ``sigmas`` stderr of every pilot grid point
    under growth_bound(env, K, 0, t, v, c). Points carry K, t,
    unsigned_second_moment and unsigned_second_moment_stderr.
    """
    v = np.asarray(v, dtype=float)
    initial = 1.0 + float(v @ v)
    exponents = []
    for pt in points:
        exposure = pt["K"] * env.integrated_lambda(0.0, pt["t"])
        if exposure <= 0:
            continue
        upper = pt["unsigned_second_moment"] + sigmas * np.nan_to_num(pt["unsigned_second_moment_stderr"])
        exponents.append(math.log(upper / initial) / exposure)
    return max(max(exponents, default=0.0), 0.0)


def growth_bound_holds(env: Environment, points: Sequence[dict], v: Sequence[float], c: float,
                       sigmas: float = 2.0) -> Tuple[bool, List[float]]:
    """
    Check grid points from independent replicas against the bound with a
    frozen c: a point fails when its mean less ``sigmas`` stderr exceeds the
    bound. Returns (holds, bounds).
    """
    bounds = [growth_bound(env, pt["K"], 0.0, pt["t"], v, c) for pt in points]
    holds = all(pt["unsigned_second_moment"] - sigmas * np.nan_to_num(pt["unsigned_second_moment_stderr"])
                <= bound * (1.0 + 1e-12) for pt, bound in zip(points, bounds))
    return holds, bounds


def fit_growth(kt: Sequence[float], log_mean: Sequence[float]) -> dict:
    """
    Quadratic fit of log E<1 + |v|^2, Xi*_t> against K t. Returns the linear
    slope, the quadratic coefficient with its standard error, and whether
    the curvature stays below two standard errors.
    """
    x = np.asarray(kt, dtype=float)
    y = np.asarray(log_mean, dtype=float)
    if x.size < 5:
        raise KacError(f"growth fit needs at least 5 grid points, got {x.size}")
    coeffs, cov = np.polyfit(x, y, 2, cov=True)
    quad, quad_se = float(coeffs[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    slope, _ = np.polyfit(x, y, 1)
    return {
        "slope": float(slope),
        "quadratic": quad,
        "quadratic_stderr": quad_se,
        "at_most_linear": quad <= 2.0 * quad_se,
        "n_points": int(x.size),
    }


def summarize(population: Population) -> dict:
    return {
        "t": population.time,
        "size": population.size,
        "signed_mass": population.signed_mass,
        "unsigned_second_moment": population.unsigned_second_moment(),
    }
