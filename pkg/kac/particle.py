"""
Labelled Kac particle system with Grad cutoff, simulated exactly by thinning.

Every unordered pair {i, j} carries a Poisson stream of candidate jumps
(z, phi) with intensity (2/N) dt dphi dz; a candidate with
z <= K |V^i - V^j|^gamma fires and moves the pair by a(V^i, V^j, z, phi).
All pair streams are dominated by one global stream using the energy bound
|V^i - V^j| <= 2 sqrt(N) on the Kac sphere.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from kac import fastloop
from kac.errors import DegenerateInputError, InvariantViolation, KacError
from kac.geometry import uniform_azimuth
from kac.kernels import KernelSpec, RateTable
from kac.measure import EmpiricalMeasure
from kac.moments import MomentTrace, MomentTracker
from kac.rng import make_rng

logger = logging.getLogger(__name__)

SPHERE_ABORT = 1e-6
BATCH = 4096
CHECK_EVERY = 2 ** 16


@dataclass
class State:
    """N labelled velocities, stored as an (N, d) array."""
    velocities: np.ndarray
    time: float = 0.0
    event_count: int = 0

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]

    def copy(self) -> "State":
        return State(self.velocities.copy(), self.time, self.event_count)

    def momentum(self) -> np.ndarray:
        return self.velocities.sum(axis=0)

    def mean_square(self) -> float:
        return float(np.einsum("ij,ij->", self.velocities, self.velocities) / self.n)

    def sphere_drift(self) -> Tuple[float, float]:
        """(|mean velocity|, |mean square - 1|)."""
        return float(np.linalg.norm(self.momentum())) / self.n, abs(self.mean_square() - 1.0)

    def check_sphere(self, budget: float = SPHERE_ABORT) -> None:
        momentum_drift, energy_drift = self.sphere_drift()
        if momentum_drift > budget or energy_drift > budget:
            raise InvariantViolation(
                f"state left the Kac sphere at t={self.time:.6g}",
                momentum_drift=momentum_drift, energy_drift=energy_drift, time=self.time)


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    i: int
    j: int
    z: float
    phi: Tuple[float, ...]
    theta: float
    accepted: bool


class RecordMode(str, Enum):
    FINAL = "final"
    TRAJECTORY = "trajectory"
    EVENTS = "events"


@dataclass(frozen=True)
class SimConfig:
    K: float
    t_final: float
    seed: int = 0
    record: RecordMode = RecordMode.FINAL
    dt: Optional[float] = None
    replica: int = 0
    stream: int = 0
    cap_factor: float = 2.0
    track_moments: Tuple[float, ...] = ()
    # one trace entry per jump instead of the snapshot grid
    full_moment_trace: bool = False
    log_rejected: bool = False

    def __post_init__(self):
        object.__setattr__(self, "record", RecordMode(self.record))
        if self.K <= 0:
            raise KacError(f"cutoff level K must be positive, got {self.K}")
        if self.t_final < 0:
            raise KacError(f"t_final must be non-negative, got {self.t_final}")
        if self.record is RecordMode.TRAJECTORY and not (self.dt and self.dt > 0):
            raise KacError("trajectory recording needs a positive dt")
        if self.dt is not None and self.dt <= 0:
            raise KacError(f"dt must be positive, got {self.dt}")
        if self.cap_factor < 2.0:
            raise KacError("cap_factor below 2 does not dominate |V^i - V^j| on the Kac sphere")


@dataclass
class Trajectory:
    final: State
    times: List[float] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list)
    events: List[CollisionEvent] = field(default_factory=list)
    candidates: int = 0
    accepted: int = 0
    moment_trace: Optional[MomentTrace] = None
    moment_violations: int = 0

    @property
    def acceptance_ratio(self) -> float:
        return self.accepted / self.candidates if self.candidates else 0.0


def normalize_to_sphere(raw: np.ndarray) -> State:
    """Centre the points and rescale them to mean square 1."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 2:
        raise DegenerateInputError(f"need an (N, d) array with N >= 2, got shape {raw.shape}")
    centred = raw - raw.mean(axis=0)
    s_n = float(np.einsum("ij,ij->", centred, centred))
    if s_n <= 0.0 or not math.isfinite(s_n):
        raise DegenerateInputError("all points coincide; centred variance is zero")
    return State(centred / math.sqrt(s_n / raw.shape[0]))


class InitialDistribution(str, Enum):
    GAUSSIAN_ISO = "gaussian_iso"
    TWO_TEMPERATURE = "two_temperature"
    SHELL = "shell"


def sample_initial(dist: InitialDistribution, n: int, d: int, seed: int, r: float = 4.0,
                   replica: int = 0) -> State:
    """
    Draw n points from ``dist`` and project them onto the Kac sphere.

    TWO_TEMPERATURE draws the first half with variance 1 and the rest with
    variance r. SHELL uses antipodal pairs, plus one planar triple at 120
    degrees when n is odd, so every normalised atom has |v| = 1.
    """
    dist = InitialDistribution(dist)
    if n < 2:
        raise KacError(f"need at least two particles, got {n}")
    if d < 3:
        raise KacError(f"dimension must be >= 3, got {d}")
    rng = make_rng(seed, replica, stream=1)
    if dist is InitialDistribution.GAUSSIAN_ISO:
        raw = rng.standard_normal((n, d))
    elif dist is InitialDistribution.TWO_TEMPERATURE:
        if r <= 0:
            raise KacError(f"temperature ratio must be positive, got {r}")
        raw = rng.standard_normal((n, d))
        raw[n // 2:] *= math.sqrt(r)
    else:
        triple = n % 2
        half = rng.standard_normal(((n - 3 * triple) // 2, d))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        parts = [half, -half]
        if triple:
            # e, f orthonormal; e and e rotated by +-120 degrees sum to zero
            e, f = np.linalg.qr(rng.standard_normal((d, 2)))[0].T
            h = 0.5 * math.sqrt(3.0)
            parts.append(np.stack([e, -0.5 * e + h * f, -0.5 * e - h * f]))
        raw = np.concatenate(parts)
    return normalize_to_sphere(raw)


def empirical(state: State) -> EmpiricalMeasure:
    return EmpiricalMeasure(state.velocities)


class CandidateStream:
    """
    Homogeneous Poisson stream of candidate (t, i, j, z, phi) at total rate
    (N - 1) |S^{d-2}| z_cap, drawn in fixed-size batches from one generator.

    ``position`` is the next unread candidate of the current batch and
    ``clock[0]`` the time of the last candidate read.
    """

    def __init__(self, rng: np.random.Generator, n: int, d: int, rate: float, z_cap: float,
                 start: float = 0.0):
        self.rng, self.n, self.d = rng, n, d
        self.rate, self.z_cap = rate, z_cap
        self.clock = np.array([start], dtype=float)
        self._fill()

    def _fill(self):
        rng = self.rng
        self.gaps = rng.exponential(1.0 / self.rate, BATCH)
        first = rng.integers(0, self.n, BATCH)
        second = rng.integers(0, self.n - 1, BATCH)
        second = second + (second >= first)
        self.first = np.minimum(first, second)
        self.second = np.maximum(first, second)
        self.z = self.z_cap * (1.0 - rng.random(BATCH))
        self.phi = uniform_azimuth(rng, self.d, BATCH)
        self.position = 0

    @property
    def t(self) -> float:
        return float(self.clock[0])

    def run_until(self, t_stop: float, screen: Callable[["CandidateStream", float], int]) -> None:
        """Feed batches to ``screen`` until the next candidate lies past ``t_stop``."""
        while True:
            if self.position == BATCH:
                self._fill()
            self.position = screen(self, t_stop)
            if self.position < BATCH:
                return


def candidate_rate(spec: KernelSpec, n: int, z_cap: float) -> float:
    """N(N-1)/2 pairs, each at rate (2/N) |S^{d-2}| z_cap."""
    return (n - 1) * spec.sphere_area * z_cap


def _snapshot_times(start: float, t_final: float, dt: float) -> List[float]:
    count = int(math.floor(t_final / dt + 1e-9))
    return [start + k * dt for k in range(count + 1)]


class _SingleScreen:
    """Batch buffers around fastloop.screen_single for one process."""

    def __init__(self, current: State, K: float, spec: KernelSpec, table: RateTable,
                 tracker: Optional[MomentTracker], log_mode: int, traj: Trajectory):
        self.current, self.K, self.gamma, self.table = current, K, spec.gamma, table
        self.tracker, self.log_mode, self.traj = tracker, log_mode, traj
        m = len(tracker.orders) if tracker is not None else 0
        self.counters = np.zeros(3, dtype=np.int64)
        self.log_k = np.zeros(BATCH, dtype=np.int64)
        self.log_t = np.zeros(BATCH)
        self.log_theta = np.zeros(BATCH)
        self.log_accepted = np.zeros(BATCH, dtype=bool)
        self.jump_lambda = np.zeros((BATCH, m))
        self.jump_ratio = np.zeros((BATCH, m))
        if tracker is not None:
            self.moments = (tracker.order_array, tracker.sums, tracker.max_ratios, tracker.peaks,
                            tracker.violation_counts, tracker.updates)
        else:
            self.moments = (np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64),
                            np.zeros(1, dtype=np.int64))
        self._next_check = CHECK_EVERY

    def __call__(self, stream: CandidateStream, t_stop: float) -> int:
        self.counters[2] = 0
        position = fastloop.screen_single(
            self.current.velocities, stream.clock, t_stop, stream.position, stream.gaps, stream.first,
            stream.second, stream.z, stream.phi, self.K, self.gamma, self.table.splines, self.counters,
            self.log_mode, self.log_k, self.log_t, self.log_theta, self.log_accepted,
            *self.moments, self.jump_lambda, self.jump_ratio)
        logged = int(self.counters[2])
        if logged:
            self._flush(stream, logged)
        if self.tracker is not None:
            self.tracker.report_violations(stream.t)
        if self.counters[1] >= self._next_check:
            self.current.time = stream.t
            self.current.check_sphere()
            self._next_check += CHECK_EVERY
        return position

    def _flush(self, stream: CandidateStream, logged: int):
        rows = range(logged)
        if self.traj is not None:
            for r in rows:
                k = int(self.log_k[r])
                self.traj.events.append(CollisionEvent(
                    float(self.log_t[r]), int(stream.first[k]), int(stream.second[k]), float(stream.z[k]),
                    tuple(stream.phi[k].tolist()), float(self.log_theta[r]), bool(self.log_accepted[r])))
        if self.tracker is not None and self.tracker.full_trace:
            jumps = np.flatnonzero(self.log_accepted[:logged])
            self.tracker.append_jumps(self.log_t[jumps].tolist(), self.jump_lambda[jumps], self.jump_ratio[jumps])


def simulate(state: State, spec: KernelSpec, table: RateTable, cfg: SimConfig) -> Trajectory:
    """
    Run the cutoff process from ``state`` for ``cfg.t_final``; the input state
    is not modified.
    """
    current = state.copy()
    V = current.velocities
    n, d = V.shape
    if d != spec.d:
        raise KacError(f"state dimension {d} does not match kernel dimension {spec.d}")
    K = cfg.K
    x_cap = cfg.cap_factor * math.sqrt(n)
    z_cap = K * x_cap ** spec.gamma
    rate = candidate_rate(spec, n, z_cap)
    t_end = current.time + cfg.t_final

    traj = Trajectory(final=current)
    tracker = None
    if cfg.track_moments:
        tracker = MomentTracker(V, cfg.track_moments, current.time, full_trace=cfg.full_moment_trace)
    record_events = cfg.record is RecordMode.EVENTS
    log_mode = 2 if record_events and cfg.log_rejected else 1 if record_events else 0
    if tracker is not None and tracker.full_trace:
        log_mode = max(log_mode, 1)
    # event recording also takes snapshots when a cadence is given
    keep_snapshots = cfg.record is RecordMode.TRAJECTORY or (record_events and cfg.dt)
    pending = _snapshot_times(current.time, cfg.t_final, cfg.dt) if keep_snapshots else []

    def take_snapshot(at: float):
        traj.times.append(at)
        traj.snapshots.append(V.copy())
        current.time = at
        current.check_sphere()
        if tracker is not None:
            tracker.record(at)

    if cfg.t_final > 0:
        stream = CandidateStream(make_rng(cfg.seed, cfg.replica, cfg.stream), n, d, rate, z_cap, current.time)
        screen = _SingleScreen(current, K, spec, table, tracker, log_mode, traj if record_events else None)
        while True:
            t_stop = min(pending[0], t_end) if pending else t_end
            stream.run_until(t_stop, screen)
            if t_stop >= t_end:
                break
            take_snapshot(pending.pop(0))
        traj.candidates = int(screen.counters[0])
        traj.accepted = int(screen.counters[1])
        current.event_count += traj.accepted

    while pending and pending[0] <= t_end:
        take_snapshot(pending.pop(0))
    current.time = t_end
    current.check_sphere()
    if tracker is not None:
        tracker.record(t_end)
        traj.moment_trace = tracker.finish()
        traj.moment_violations = sum(tracker.violations.values())
    logger.debug(f"simulate: N={n} K={K} T={cfg.t_final} candidates={traj.candidates} "
                 f"accepted={traj.accepted} ratio={traj.acceptance_ratio:.3f}")
    return traj
