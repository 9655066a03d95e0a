"""
Moment functionals Lambda_k, moment traces and stopping times, Povzner
coefficients, the coefficient lambda_p and the concentration-of-moments
experiment.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy import integrate, stats

from kac import fastloop
from kac.errors import KernelDomainError, MissingMomentError
from kac.fastloop import PER_JUMP_SLACK, RECOMPUTE_EVERY
from kac.kernels import HALF_PI, KernelSpec, RateTable, beta_density
from kac.measure import EmpiricalMeasure
from kac.statistics import binomial_stderr, nonincreasing_within

logger = logging.getLogger(__name__)


def _atoms(mu: Union[EmpiricalMeasure, np.ndarray]) -> np.ndarray:
    return mu.atoms if isinstance(mu, EmpiricalMeasure) else np.asarray(mu, dtype=float)


def moment_weights(velocities: np.ndarray, k: float) -> np.ndarray:
    """(1 + |v|^2)^{k/2} per atom."""
    sq = np.einsum("ij,ij->i", velocities, velocities)
    return (1.0 + sq) ** (0.5 * k)


def lambda_k(mu: Union[EmpiricalMeasure, np.ndarray], k: float) -> float:
    """Lambda_k(mu) = <(1 + |v|^2)^{k/2}, mu>."""
    if k < 0:
        raise KernelDomainError(f"moment order must be >= 0, got {k}")
    return float(np.mean(moment_weights(_atoms(mu), k)))


def lambda_k_pair(mu, nu, k: float) -> float:
    """Lambda_k(mu, nu) = max(Lambda_k(mu), Lambda_k(nu))."""
    return max(lambda_k(mu, k), lambda_k(nu, k))


def abs_moment(mu, p: float) -> float:
    """<|v|^p, mu>."""
    atoms = _atoms(mu)
    return float(np.mean(np.linalg.norm(atoms, axis=1) ** p))


@dataclass
class MomentTrace:
    """
    Lambda_k at recorded times plus running extremes over every jump.

    Times are the snapshot grid of the run, or every jump when the tracker
    keeps a full trace; ``per_jump_ratios`` is filled only in that case.
    """
    times: List[float] = field(default_factory=list)
    lambda_k: Dict[float, List[float]] = field(default_factory=dict)
    per_jump_ratios: Dict[float, List[float]] = field(default_factory=dict)
    max_ratios: Dict[float, float] = field(default_factory=dict)
    peaks: Dict[float, float] = field(default_factory=dict)
    jumps: int = 0

    def values(self, k: float) -> np.ndarray:
        if k not in self.lambda_k:
            raise MissingMomentError(f"trace carries orders {sorted(self.lambda_k)}, not {k}")
        return np.asarray(self.lambda_k[k])

    def max_ratio(self, k: float) -> float:
        ratio = self.max_ratios.get(k)
        if ratio is None or not math.isfinite(ratio):
            ratios = self.per_jump_ratios.get(k, [])
            return max(ratios) if ratios else 1.0
        return ratio

    def peak(self, k: float) -> float:
        """sup of Lambda_k over every jump, not only the recorded times."""
        if k in self.peaks:
            return self.peaks[k]
        return float(np.max(self.values(k)))


class MomentTracker:
    """
    Incremental sums of (1 + |v|^2)^{k/2} over a velocity array.

    After every jump the running maximum of Lambda_k and of the per-jump
    ratio Lambda_k(after)/Lambda_k(before) are updated and violations of
    Lambda_k(after) <= 2^{k/2+1} Lambda_k(before) are counted. Lambda_k
    itself is stored only when ``record`` is called, unless ``full_trace``
    asks for one entry per jump.
    """

    def __init__(self, velocities: np.ndarray, orders: Iterable[float], time: float = 0.0,
                 full_trace: bool = False):
        self.orders = tuple(float(k) for k in orders)
        self.n = velocities.shape[0]
        self.full_trace = full_trace
        m = len(self.orders)
        self.order_array = np.asarray(self.orders, dtype=float)
        self.sums = np.array([np.sum(moment_weights(velocities, k)) for k in self.orders], dtype=float)
        self.max_ratios = np.full(m, -np.inf)
        self.peaks = self.sums / self.n
        self.violation_counts = np.zeros(m, dtype=np.int64)
        self.updates = np.zeros(1, dtype=np.int64)
        self.trace = MomentTrace(times=[time],
                                 lambda_k={k: [float(self.sums[q]) / self.n] for q, k in enumerate(self.orders)},
                                 per_jump_ratios={k: [] for k in self.orders} if full_trace else {})
        self._reported = np.zeros(m, dtype=np.int64)
        self._jump_lambda = np.empty((1, m))
        self._jump_ratio = np.empty((1, m))

    @property
    def violations(self) -> Dict[float, int]:
        return {k: int(c) for k, c in zip(self.orders, self.violation_counts)}

    def current(self, k: float) -> float:
        return float(self.sums[self.orders.index(k)]) / self.n

    def update(self, velocities: np.ndarray, i: int, j: int, old_i: np.ndarray, old_j: np.ndarray,
               time: float) -> None:
        """Account for one jump of particles i and j that moved from old_i, old_j."""
        row = 0 if self.full_trace else -1
        fastloop.track_jump(velocities, i, j, 1.0 + float(old_i @ old_i), 1.0 + float(old_j @ old_j),
                            self.order_array, self.sums, self.max_ratios, self.peaks, self.violation_counts,
                            self.updates, self._jump_lambda, self._jump_ratio, row)
        if self.full_trace:
            self.append_jumps([time], self._jump_lambda, self._jump_ratio)
        self.report_violations(time)

    def append_jumps(self, times: Sequence[float], jump_lambda: np.ndarray, jump_ratio: np.ndarray) -> None:
        """Append per-jump rows; used when ``full_trace`` is set."""
        self.trace.times.extend(times)
        for q, k in enumerate(self.orders):
            self.trace.lambda_k[k].extend(jump_lambda[:len(times), q].tolist())
            self.trace.per_jump_ratios[k].extend(jump_ratio[:len(times), q].tolist())

    def record(self, time: float) -> None:
        """Store the current Lambda_k at ``time``; a full trace already has every jump."""
        if self.full_trace or (self.trace.times and self.trace.times[-1] == time):
            return
        self.trace.times.append(time)
        for q, k in enumerate(self.orders):
            self.trace.lambda_k[k].append(float(self.sums[q]) / self.n)

    def report_violations(self, time: float) -> None:
        fresh = self.violation_counts - self._reported
        for q in np.flatnonzero(fresh):
            logger.error(f"Per-jump bound violated for k={self.orders[q]}: {int(fresh[q])} jump(s) "
                         f"up to t={time:.6g}, max ratio {self.max_ratios[q]:.6g}")
        self._reported[:] = self.violation_counts

    def finish(self) -> MomentTrace:
        self.trace.max_ratios = {k: float(self.max_ratios[q]) for q, k in enumerate(self.orders)}
        self.trace.peaks = {k: float(self.peaks[q]) for q, k in enumerate(self.orders)}
        self.trace.jumps = int(self.updates[0])
        return self.trace


def stopping_time_Tb(trace: MomentTrace, p: float, b: float) -> float:
    """
    First recorded time with Lambda_p > b / 2^{p/2+1}; +inf if never.

    Resolved to the trace's recorded times; ``exceeds_level`` answers
    whether T_b <= t_final at jump resolution.
    """
    if b <= 1.0:
        raise KernelDomainError(f"b must exceed 1, got {b}")
    values = trace.values(p)
    threshold = b / 2.0 ** (0.5 * p + 1.0)
    above = np.flatnonzero(values > threshold)
    if above.size == 0:
        return math.inf
    return float(trace.times[above[0]])


def exceeds_level(trace: MomentTrace, p: float, b: float) -> bool:
    """T_b <= end of the run, i.e. sup_t Lambda_p(t) > b / 2^{p/2+1} over every jump."""
    if b <= 1.0:
        raise KernelDomainError(f"b must exceed 1, got {b}")
    return trace.peak(p) > b / 2.0 ** (0.5 * p + 1.0)


def povzner_beta(p: float, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """1 - ((1 + cos theta)/2)^{p/2} - (sin(theta)/2)^{p/2}."""
    if p < 4:
        raise KernelDomainError(f"Povzner coefficient needs p >= 4, got {p}")
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0.0) or np.any(th > HALF_PI):
        raise KernelDomainError("theta must lie in (0, pi/2]")
    # (1 + cos)/2 = 1 - sin^2(theta/2), kept in this form for small angles
    half = np.sin(0.5 * th) ** 2
    value = -np.expm1(0.5 * p * np.log1p(-half)) - (np.sin(th) / 2.0) ** (0.5 * p)
    return float(value) if np.ndim(theta) == 0 else value


def _lambda_p_integrand(spec: KernelSpec, p: float):
    def integrand(theta):
        half = math.sin(0.5 * theta) ** 2
        return -math.expm1(0.5 * p * math.log1p(-half)) * beta_density(spec, theta)
    return integrand


def lambda_p_coefficient(spec: KernelSpec, table: Optional[RateTable], p: float) -> float:
    """lambda_p = |S^{d-2}| int_0^{pi/2} (1 - ((1 + cos theta)/2)^{p/2}) beta(theta) dtheta."""
    if p < 2:
        raise KernelDomainError(f"lambda_p needs p >= 2, got {p}")
    value, _ = integrate.quad(_lambda_p_integrand(spec, p), 0.0, HALF_PI,
                              epsabs=0.0, epsrel=1e-12, limit=200)
    return spec.sphere_area * value


def lambda_p_coefficient_check(spec: KernelSpec, p: float) -> float:
    """Second evaluation of lambda_p with the vectorised Gauss-Kronrod integrator."""
    integrand = _lambda_p_integrand(spec, p)
    value, _ = integrate.quad_vec(integrand, 0.0, HALF_PI, epsabs=0.0, epsrel=1e-12, norm="max")
    return spec.sphere_area * float(value)


class ConcentrationReport(BaseModel):
    p: float
    b: Optional[float] = None
    b_factor: Optional[float] = None
    t_final: float
    K: float
    replicas: int
    epsilon: float
    n_values: List[int]
    exceedance: List[float]
    exceedance_stderr: List[float]
    sup_excess: List[float]
    fitted_exponent: Optional[float] = None
    nonincreasing: bool


def _concentration_replica(job) -> Tuple[bool, bool]:
    # particle imports this module for MomentTracker
    from kac.particle import RecordMode, SimConfig, sample_initial, simulate

    spec, table, cfg, p, b, b_factor, n, initial, seed, replica, epsilon = job
    state = sample_initial(initial, n, spec.d, seed, replica=replica)
    threshold_b = b if b is not None else b_factor * 2.0 ** (0.5 * p + 1.0) * lambda_k(state.velocities, p)
    run_cfg = SimConfig(K=cfg.K, t_final=cfg.t_final, seed=seed, replica=replica,
                        record=RecordMode.TRAJECTORY, dt=cfg.dt or cfg.t_final / 64.0 or 1.0,
                        track_moments=(p,))
    traj = simulate(state, spec, table, run_cfg)
    hit = exceeds_level(traj.moment_trace, p, threshold_b)
    return hit, sup_moment_excess(traj.snapshots, p, epsilon)


def sup_moment_excess(snapshots: Sequence[np.ndarray], p: float, epsilon: float) -> bool:
    """sup_t <|v|^p, mu_t> >= <|v|^p, mu_0> + epsilon over the recorded snapshots."""
    start = abs_moment(snapshots[0], p)
    return max(abs_moment(snap, p) for snap in snapshots) >= start + epsilon


def concentration_experiment(spec: KernelSpec, table: RateTable, cfg, p: float, b: Optional[float] = None,
                             replicas: int = 100, n_values: Sequence[int] = (64, 128, 256, 512),
                             initial: str = "gaussian_iso", seed: int = 0, b_factor: Optional[float] = None,
                             epsilon: float = 0.5, mapper: Callable = map) -> ConcentrationReport:
    """
    Estimate P(T_b <= t_final) for each N over ``replicas`` runs of ``cfg``.

    ``b`` is an absolute level; ``b_factor`` instead sets b per replica to
    b_factor 2^{p/2+1} Lambda_p(mu_0). ``mapper`` lets callers fan the
    replica jobs out to a pool; results are consumed in job order.
    """
    if (b is None) == (b_factor is None):
        raise KernelDomainError("give exactly one of b and b_factor")
    if b is not None and b <= 1.0:
        raise KernelDomainError(f"b must exceed 1, got {b}")
    if replicas < 1:
        raise KernelDomainError(f"need at least one replica, got {replicas}")
    n_values = sorted(int(n) for n in n_values)
    exceed, stderr, excess = [], [], []
    for n in n_values:
        jobs = [(spec, table, cfg, p, b, b_factor, n, initial, seed, r, epsilon) for r in range(replicas)]
        outcomes = list(mapper(_concentration_replica, jobs))
        prob = sum(hit for hit, _ in outcomes) / replicas
        exceed.append(prob)
        stderr.append(binomial_stderr(prob, replicas))
        excess.append(sum(ex for _, ex in outcomes) / replicas)
        logger.info(f"Concentration N={n}: P(T_b <= t)={prob:.4f} sup-excess={excess[-1]:.4f}")

    positive = [(n, q) for n, q in zip(n_values, exceed) if q > 0]
    exponent = None
    if len(positive) >= 2:
        fit = stats.linregress(np.log([n for n, _ in positive]), np.log([q for _, q in positive]))
        exponent = float(fit.slope)
    return ConcentrationReport(
        p=p, b=b, b_factor=b_factor, t_final=cfg.t_final, K=cfg.K, replicas=replicas, epsilon=epsilon,
        n_values=n_values, exceedance=exceed, exceedance_stderr=stderr, sup_excess=excess,
        fitted_exponent=exponent, nonincreasing=nonincreasing_within(exceed, stderr),
    )
