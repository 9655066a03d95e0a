"""
Tanaka coupling of two cutoff Kac processes.

A fine process (cutoff K') and a coarse process (cutoff K <= K') read the
same candidate stream. The fine process uses each candidate as drawn; the
coarse process uses the same z with the azimuth turned by
R(V^i - V^j, W^i - W^j), evaluated before either process jumps.
``couple_levels`` drives several coarse levels from one fine pass.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from kac import fastloop
from kac.errors import KacError, SizeMismatchError
from kac.kernels import KernelSpec, RateTable
from kac.particle import CandidateStream, State, candidate_rate
from kac.rng import make_rng

logger = logging.getLogger(__name__)


@dataclass
class CoupledPair:
    fine: State
    coarse: State
    K: float
    K_prime: float
    p: float = 8.0
    shared_clock: float = 0.0

    def __post_init__(self):
        if self.fine.velocities.shape != self.coarse.velocities.shape:
            raise SizeMismatchError(
                f"coupled states differ in shape: {self.fine.velocities.shape} vs {self.coarse.velocities.shape}")
        if self.K < 0 or self.K_prime <= 0 or self.K > self.K_prime:
            raise KacError(f"need 0 <= K <= K' and K' > 0, got K={self.K}, K'={self.K_prime}")
        if self.p < 0:
            raise KacError(f"p must be >= 0, got {self.p}")

    @classmethod
    def from_state(cls, state: State, K: float, K_prime: float, p: float = 8.0) -> "CoupledPair":
        """Both processes started from copies of the same labelled state."""
        return cls(fine=state.copy(), coarse=state.copy(), K=K, K_prime=K_prime, p=p,
                   shared_clock=state.time)


def bar_d_p_squared_arrays(V: np.ndarray, W: np.ndarray, p: float) -> float:
    """(1/N) sum_i d_p(V^i, W^i)^2 for aligned label arrays."""
    if V.shape != W.shape:
        raise SizeMismatchError(f"label arrays differ in shape: {V.shape} vs {W.shape}")
    weight = 1.0 + np.linalg.norm(V, axis=1) ** p + np.linalg.norm(W, axis=1) ** p
    diff = V - W
    return float(np.mean(weight * np.einsum("ij,ij->i", diff, diff)))


def bar_d_p_squared(pair: CoupledPair, p: Optional[float] = None) -> float:
    return bar_d_p_squared_arrays(pair.fine.velocities, pair.coarse.velocities, pair.p if p is None else p)


@dataclass
class CoupledTrajectory:
    pair: CoupledPair
    times: List[float] = field(default_factory=list)
    bar_d: Dict[float, List[float]] = field(default_factory=dict)
    candidates: int = 0
    fine_accepted: int = 0
    coarse_accepted: int = 0
    both_accepted: int = 0

    def final_bar_d(self, p: Optional[float] = None) -> float:
        return self.bar_d[self.pair.p if p is None else p][-1]


@dataclass
class LevelScan:
    """
    One fine process and one coarse process per cutoff level, all driven by
    the same candidate stream. ``bar_d[K][p]`` is the bar d_p^2 series of the
    level-K coarse process against the fine one.
    """
    fine: State
    coarse: List[State]
    levels: Tuple[float, ...]
    K_prime: float
    times: List[float] = field(default_factory=list)
    bar_d: Dict[float, Dict[float, List[float]]] = field(default_factory=dict)
    candidates: int = 0
    fine_accepted: int = 0
    coarse_accepted: List[int] = field(default_factory=list)
    both_accepted: List[int] = field(default_factory=list)


def _coupled_run(V: np.ndarray, W: np.ndarray, levels: np.ndarray, K_prime: float, spec: KernelSpec,
                 table: RateTable, t0: float, t_final: float, seed: int, dt: Optional[float], replica: int,
                 stream: int, on_snapshot: Callable[[float], None]) -> Tuple[int, int, np.ndarray]:
    """
    Advance V and every W[m] in place on one candidate stream, calling
    ``on_snapshot(t)`` on the grid t0 + k dt. Returns (candidates, fine
    accepted, coarse counts) with coarse counts[0] the coarse jumps and
    counts[1] the joint ones per level.
    """
    n, d = V.shape
    if d != spec.d:
        raise KacError(f"state dimension {d} does not match kernel dimension {spec.d}")
    z_cap = K_prime * (2.0 * math.sqrt(n)) ** spec.gamma
    rate = candidate_rate(spec, n, z_cap)
    t_end = t0 + t_final
    dt = dt or (t_final / 64.0 if t_final > 0 else 1.0)
    pending = [t0 + k * dt for k in range(int(math.floor(t_final / dt + 1e-9)) + 1)]
    counters = np.zeros(2, dtype=np.int64)
    coarse_counts = np.zeros((2, levels.size), dtype=np.int64)

    def screen(candidates: CandidateStream, t_stop: float) -> int:
        return fastloop.screen_coupled(V, W, candidates.clock, t_stop, candidates.position, candidates.gaps,
                                       candidates.first, candidates.second, candidates.z, candidates.phi,
                                       K_prime, levels, spec.gamma, table.splines, counters, coarse_counts)

    if t_final > 0:
        candidates = CandidateStream(make_rng(seed, replica, stream), n, d, rate, z_cap, t0)
        while True:
            t_stop = min(pending[0], t_end) if pending else t_end
            candidates.run_until(t_stop, screen)
            if t_stop >= t_end:
                break
            on_snapshot(pending.pop(0))
    while pending and pending[0] <= t_end:
        on_snapshot(pending.pop(0))
    return int(counters[0]), int(counters[1]), coarse_counts


def couple_levels(state: State, levels: Sequence[float], K_prime: float, spec: KernelSpec, table: RateTable,
                  t_final: float, seed: int, dt: Optional[float] = None, replica: int = 0, stream: int = 0,
                  p_values: Iterable[float] = (8.0,)) -> LevelScan:
    """
    Couple every level K in ``levels`` to one fine process at K' started from
    copies of ``state``. Each coarse marginal equals the coarse process of
    ``couple_simulate`` at that K with the same seed, replica and stream.
    """
    levels = tuple(float(K) for K in levels)
    if not levels or len(set(levels)) != len(levels):
        raise KacError(f"need distinct coupling levels, got {levels}")
    if K_prime <= 0 or any(K < 0 or K > K_prime for K in levels):
        raise KacError(f"need 0 <= K <= K' and K' > 0, got levels {levels} and K'={K_prime}")
    ps = tuple(dict.fromkeys(float(p) for p in p_values))
    if any(p < 0 for p in ps):
        raise KacError(f"p must be >= 0, got {ps}")
    fine = state.copy()
    V = fine.velocities
    W = np.ascontiguousarray(np.repeat(V[None], len(levels), axis=0))
    scan = LevelScan(fine=fine, coarse=[], levels=levels, K_prime=K_prime,
                     bar_d={K: {p: [] for p in ps} for K in levels})

    def on_snapshot(t: float):
        scan.times.append(t)
        for m, K in enumerate(levels):
            for p in ps:
                scan.bar_d[K][p].append(bar_d_p_squared_arrays(V, W[m], p))

    scan.candidates, scan.fine_accepted, counts = _coupled_run(
        V, W, np.asarray(levels, dtype=float), K_prime, spec, table, state.time, t_final, seed, dt,
        replica, stream, on_snapshot)
    t_end = state.time + t_final
    fine.time = t_end
    fine.event_count += scan.fine_accepted
    fine.check_sphere()
    for m in range(len(levels)):
        coarse = State(W[m].copy(), t_end, state.event_count + int(counts[0, m]))
        coarse.check_sphere()
        scan.coarse.append(coarse)
    scan.coarse_accepted = counts[0].tolist()
    scan.both_accepted = counts[1].tolist()
    logger.debug(f"couple_levels: N={V.shape[0]} levels={levels} K'={K_prime} candidates={scan.candidates} "
                 f"fine={scan.fine_accepted} coarse={scan.coarse_accepted}")
    return scan


def couple_simulate(pair: CoupledPair, spec: KernelSpec, table: RateTable, t_final: float, seed: int,
                    dt: Optional[float] = None, replica: int = 0, stream: int = 0,
                    p_values: Iterable[float] = ()) -> CoupledTrajectory:
    """
    Evolve both processes for ``t_final`` on one candidate stream, recording
    bar d_p^2 every ``dt`` (default t_final / 64) for ``pair.p`` and any extra
    ``p_values``. The pair is advanced in place.
    """
    V = pair.fine.velocities
    W = np.ascontiguousarray(pair.coarse.velocities[None])
    ps = tuple(dict.fromkeys((pair.p,) + tuple(float(p) for p in p_values)))
    traj = CoupledTrajectory(pair=pair, bar_d={p: [] for p in ps})

    def on_snapshot(t: float):
        traj.times.append(t)
        for p in ps:
            traj.bar_d[p].append(bar_d_p_squared_arrays(V, W[0], p))

    traj.candidates, traj.fine_accepted, counts = _coupled_run(
        V, W, np.array([pair.K]), pair.K_prime, spec, table, pair.shared_clock, t_final, seed, dt,
        replica, stream, on_snapshot)
    pair.coarse.velocities[...] = W[0]
    traj.coarse_accepted, traj.both_accepted = int(counts[0, 0]), int(counts[1, 0])
    pair.fine.event_count += traj.fine_accepted
    pair.coarse.event_count += traj.coarse_accepted
    pair.shared_clock += t_final
    pair.fine.time = pair.coarse.time = pair.shared_clock
    pair.fine.check_sphere()
    pair.coarse.check_sphere()
    logger.debug(f"couple_simulate: N={V.shape[0]} K={pair.K} K'={pair.K_prime} candidates={traj.candidates} "
                 f"fine={traj.fine_accepted} coarse={traj.coarse_accepted} both={traj.both_accepted}")
    return traj


def fit_k_scaling(k_values: Iterable[float], mean_bar_d: Iterable[float]) -> Tuple[float, float, float, int]:
    """Least-squares slope of log E[bar d_p^2] against log K: (slope, intercept, stderr, n_points)."""
    ks = np.asarray(list(k_values), dtype=float)
    ys = np.asarray(list(mean_bar_d), dtype=float)
    keep = (ks > 0) & (ys > 0)
    if keep.sum() < 2:
        raise KacError("need at least two positive points to fit a K-scaling slope")
    fit = stats.linregress(np.log(ks[keep]), np.log(ys[keep]))
    return float(fit.slope), float(fit.intercept), float(fit.stderr), int(keep.sum())
