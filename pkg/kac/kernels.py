"""
Angular collision kernels, the cumulative rate H and its inverse G.

The collision kernel is B(v - v_star, sigma) = |v - v_star|^gamma b(cos theta).
Jumps are parametrised by a rate variable z > 0: the deflection angle of a
jump is theta = G(z / |v - v_star|^gamma), where G inverts

    H(theta) = int_theta^{pi/2} b(cos x) dx,

a decreasing bijection from (0, pi/2] onto [0, infinity).

H is tabulated once per kernel on log-spaced knots between pi/2 and a small
angle; below the smallest knot a closed-form series is used, since the
integrand blows up like x^{-1-nu}.
"""

import hashlib
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import integrate, interpolate, special

from kac import fastloop
from kac.errors import CacheFormatError, KernelDomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

HALF_PI = 0.5 * math.pi
CACHE_MAGIC = b"KACG"
CACHE_VERSION = 1
DEFAULT_KNOTS = 4096
DEFAULT_THETA_SMALL = 1e-3
DEFAULT_TOLERANCE = 1e-10


class AngularForm(str, Enum):
    CANONICAL_HARD = "canonical_hard"
    USER_TABLE = "user_table"


@dataclass(frozen=True)
class KernelSpec:
    """
    Collision kernel parameters.

    ``user_x``/``user_b`` sample the angular density on [0, x_last] for
    ``AngularForm.USER_TABLE``; beyond x_last the density continues as
    c (1 - x)^{-(1+nu)/2} with c matched at the last sample.
    """
    d: int = 3
    gamma: float = 0.5
    nu: float = 0.5
    b_form: AngularForm = AngularForm.CANONICAL_HARD
    user_x: Optional[Tuple[float, ...]] = None
    user_b: Optional[Tuple[float, ...]] = None
    sphere_area: float = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise KernelDomainError(f"dimension must be an integer >= 3, got {self.d}")
        if not 0.0 <= self.gamma <= 1.0:
            raise KernelDomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.nu < 1.0:
            raise KernelDomainError(f"nu must lie in (0, 1), got {self.nu}")
        object.__setattr__(self, "b_form", AngularForm(self.b_form))
        if self.b_form is AngularForm.USER_TABLE:
            _validate_user_samples(self.user_x, self.user_b)
            object.__setattr__(self, "user_x", tuple(float(x) for x in self.user_x))
            object.__setattr__(self, "user_b", tuple(float(b) for b in self.user_b))
        # |S^{d-2}|, the azimuth sphere inside R^{d-1}
        half = 0.5 * (self.d - 1)
        object.__setattr__(self, "sphere_area", float(2.0 * math.pi ** half / special.gamma(half)))

    @property
    def tail_scale(self) -> float:
        """Constant c in b(x) ~ c (1 - x)^{-(1+nu)/2} as x -> 1."""
        if self.b_form is AngularForm.CANONICAL_HARD:
            return 1.0
        x_last, b_last = self.user_x[-1], self.user_b[-1]
        return b_last * (1.0 - x_last) ** (0.5 * (1.0 + self.nu))

    def cache_key(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.b_form.value}|{self.nu!r}".encode())
        if self.user_x is not None:
            digest.update(np.asarray(self.user_x, dtype="<f8").tobytes())
            digest.update(np.asarray(self.user_b, dtype="<f8").tobytes())
        return digest.hexdigest()[:16]


def _validate_user_samples(xs, bs):
    if xs is None or bs is None:
        raise KernelDomainError("user_table kernels need both user_x and user_b")
    xs, bs = np.asarray(xs, dtype=float), np.asarray(bs, dtype=float)
    if xs.shape != bs.shape or xs.size < 2:
        raise KernelDomainError("user_x and user_b must be equal-length arrays with >= 2 samples")
    if xs[0] != 0.0 or not xs[-1] < 1.0 or np.any(np.diff(xs) <= 0):
        raise KernelDomainError("user_x must increase strictly from 0 to a value below 1")
    if np.any(bs <= 0) or not np.all(np.isfinite(bs)):
        raise KernelDomainError("user_b must be finite and positive")


@lru_cache(maxsize=32)
def _user_interpolant(spec: KernelSpec) -> interpolate.PchipInterpolator:
    return interpolate.PchipInterpolator(np.asarray(spec.user_x), np.asarray(spec.user_b))


def _density_of_gap(spec: KernelSpec, gap: np.ndarray) -> np.ndarray:
    """b(1 - gap) for gap in (0, 1]; kept in gap form to avoid cancellation near x = 1."""
    power = -0.5 * (1.0 + spec.nu)
    if spec.b_form is AngularForm.CANONICAL_HARD:
        return gap ** power
    x = 1.0 - gap
    x_last = spec.user_x[-1]
    tail = spec.tail_scale * gap ** power
    return np.where(x <= x_last, _user_interpolant(spec)(np.minimum(x, x_last)), tail)


def _scalar_or_array(values: np.ndarray, like) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(values.reshape(-1)[0])
    return values


def b_angular(spec: KernelSpec, x: ArrayLike) -> ArrayLike:
    """Angular density b(x), supported on [0, 1)."""
    xs = np.asarray(x, dtype=float)
    if np.any(np.abs(xs) >= 1.0) or not np.all(np.isfinite(xs)):
        raise KernelDomainError(f"b is defined on (-1, 1), got {x}")
    gap = np.where(xs >= 0.0, 1.0 - xs, 1.0)
    values = np.where(xs >= 0.0, _density_of_gap(spec, gap), 0.0)
    return _scalar_or_array(np.asarray(values, dtype=float), x)


def beta_density(spec: KernelSpec, theta: ArrayLike) -> ArrayLike:
    """beta(theta) = b(cos theta), the density of z in the angle variable (dz = beta dtheta)."""
    th = np.asarray(theta, dtype=float)
    gap = 2.0 * np.sin(0.5 * th) ** 2
    return _scalar_or_array(np.asarray(_density_of_gap(spec, gap), dtype=float), theta)


def small_theta_coefficients(spec: KernelSpec) -> Tuple[float, float]:
    """(c0, c2) with b(cos x) = c0 x^{-1-nu} (1 + c2 x^2 + O(x^4)) as x -> 0."""
    c0 = spec.tail_scale * 2.0 ** (0.5 * (1.0 + spec.nu))
    c2 = (1.0 + spec.nu) / 24.0
    return c0, c2


@dataclass(frozen=True, eq=False)
class RateTable:
    """
    Tabulated H on a strictly decreasing angle grid.

    Immutable once built. The Hermite spline knots of H in log-angle and of
    its inverse are derived in ``__post_init__`` and packed into ``splines``,
    the form the compiled loops take.
    """
    nu: float
    theta_grid: np.ndarray
    H_values: np.ndarray
    beta_values: np.ndarray
    small_theta_coeffs: Tuple[float, float]
    tolerance: float = DEFAULT_TOLERANCE
    splines: Tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.theta_grid, dtype=float)
        H = np.asarray(self.H_values, dtype=float)
        beta = np.asarray(self.beta_values, dtype=float)
        if np.any(np.diff(theta) >= 0) or np.any(np.diff(H) <= 0) or H[0] != 0.0:
            raise KernelDomainError("rate table must have decreasing angles and increasing H from 0")
        for name, arr in (("theta_grid", theta), ("H_values", H), ("beta_values", beta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # d/ds H(e^s) = -beta(theta) theta
        slope = -beta * theta
        s = np.log(theta)
        c0, c2 = self.small_theta_coeffs
        params = np.array([H[-1], theta[-1], self.nu, c0, c2, s[-1], math.log(HALF_PI)])
        splines = (s[::-1], H[::-1], slope[::-1], H, s, 1.0 / slope, params)
        object.__setattr__(self, "splines", tuple(np.array(arr, dtype=float) for arr in splines))

    @property
    def theta_small(self) -> float:
        return float(self.theta_grid[-1])

    @property
    def H_max(self) -> float:
        return float(self.H_values[-1])

    def H_series(self, theta: float) -> float:
        """H below the smallest knot from the integrated two-term expansion."""
        return float(fastloop.series_rate(float(theta), self.splines[6]))

    def H_interp(self, theta: ArrayLike) -> ArrayLike:
        """Fast H from the knot Hermite spline (series below the grid)."""
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        values = fastloop.rate_many(np.ascontiguousarray(th.ravel()), self.splines)
        return _scalar_or_array(values.reshape(th.shape), theta)

    def invert(self, z: ArrayLike) -> ArrayLike:
        zs = np.atleast_1d(np.asarray(z, dtype=float))
        if np.any(zs <= 0.0) or not np.all(np.isfinite(zs)):
            raise KernelDomainError(f"G is defined for z > 0, got {z}")
        values = fastloop.invert_many(np.ascontiguousarray(zs.ravel()), self.splines)
        return _scalar_or_array(values.reshape(zs.shape), z)


def build_rate_table(spec: KernelSpec, knots: int = DEFAULT_KNOTS,
                     theta_small: float = DEFAULT_THETA_SMALL,
                     tolerance: float = DEFAULT_TOLERANCE,
                     cache_dir: Optional[Union[str, Path]] = None) -> RateTable:
    """
    Tabulate H on ``knots`` log-spaced angles from pi/2 down to ``theta_small``.

    When ``cache_dir`` (or ``KAC_CACHE_DIR``) is set the table is read from and
    written to a binary cache file keyed by the angular density.
    """
    cache_dir = cache_dir or os.getenv("KAC_CACHE_DIR")
    cache_path = None
    if cache_dir:
        cache_path = Path(cache_dir) / f"rate_{spec.cache_key()}_{knots}_{theta_small:.3e}.kacg"
        if cache_path.exists():
            try:
                table = load_rate_table(cache_path)
                if table.nu == spec.nu and table.theta_grid.size == knots:
                    logger.debug(f"Loaded rate table from {cache_path}")
                    return table
            except (CacheFormatError, KernelDomainError) as e:
                logger.warning(f"Ignoring unreadable rate table cache {cache_path}: {e}")

    theta = np.exp(np.linspace(math.log(HALF_PI), math.log(theta_small), knots))
    theta[0] = HALF_PI

    def integrand(x):
        return beta_density(spec, x)

    pieces = np.zeros(knots)
    for k in range(1, knots):
        pieces[k], _ = integrate.quad(integrand, theta[k], theta[k - 1], epsabs=0.0, epsrel=1e-13, limit=100)
    H = np.cumsum(pieces)
    table = RateTable(
        nu=spec.nu,
        theta_grid=theta,
        H_values=H,
        beta_values=np.asarray(beta_density(spec, theta)),
        small_theta_coeffs=small_theta_coefficients(spec),
        tolerance=tolerance,
    )
    logger.debug(f"Built rate table: {knots} knots, H(theta_small)={table.H_max:.6g}")
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        save_rate_table(table, cache_path)
    return table


_HEADER = struct.Struct("<4sIdddddI")


def save_rate_table(table: RateTable, path: Union[str, Path]) -> None:
    """
    Write the table as magic, version u32, scalars and f64 arrays (little-endian).

    The bytes go to a sibling temp file that is then renamed over ``path``,
    so concurrent readers see either the old file or the complete new one.
    """
    path = Path(path)
    c0, c2 = table.small_theta_coeffs
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, table.nu, table.tolerance,
                                 c0, c2, table.theta_small, table.theta_grid.size))
            for arr in (table.theta_grid, table.H_values, table.beta_values):
                f.write(np.asarray(arr, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_rate_table(path: Union[str, Path]) -> RateTable:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, nu, tolerance, c0, c2, _, n = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    if len(raw) - _HEADER.size != 8 * 3 * n:
        raise CacheFormatError(f"{path}: expected {8 * 3 * n} body bytes, found {len(raw) - _HEADER.size}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    theta, H, beta = (body[i * n:(i + 1) * n].astype(float) for i in range(3))
    return RateTable(nu=nu, theta_grid=theta, H_values=H, beta_values=beta,
                     small_theta_coeffs=(c0, c2), tolerance=tolerance)


def H_of(spec: KernelSpec, table: RateTable, theta: ArrayLike) -> ArrayLike:
    """
    H(theta) to quadrature accuracy: knot value plus adaptive quadrature back
    to the nearest knot above, or the closed-form series below the grid.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(th <= 0.0) or np.any(th > HALF_PI) or not np.all(np.isfinite(th)):
        raise KernelDomainError(f"H is defined on (0, pi/2], got {theta}")
    ascending = table.theta_grid[::-1]
    n = ascending.size
    out = np.empty_like(th)
    for idx, t in enumerate(th):
        if t < table.theta_small:
            out[idx] = table.H_series(t)
            continue
        k = n - 1 - int(np.searchsorted(ascending, t, side="left"))
        knot = table.theta_grid[k]
        extra = 0.0
        if knot > t:
            extra, _ = integrate.quad(lambda x: beta_density(spec, x), t, knot, epsabs=0.0, epsrel=1e-13)
        out[idx] = table.H_values[k] + extra
    return _scalar_or_array(out, theta)


def G_of(spec: KernelSpec, table: RateTable, z: ArrayLike) -> ArrayLike:
    """The inverse of H: the angle theta in (0, pi/2) with H(theta) = z."""
    return table.invert(z)


def G_prime(spec: KernelSpec, table: RateTable, z: ArrayLike) -> ArrayLike:
    """G'(z) = -1 / b(cos G(z))."""
    return -1.0 / np.asarray(beta_density(spec, G_of(spec, table, z)))


def cutoff_angle(spec: KernelSpec, table: RateTable, K: float) -> float:
    """Smallest deflection angle retained at cutoff level K: G(K)."""
    return float(G_of(spec, table, K))


def theta_of(spec: KernelSpec, table: RateTable, v: np.ndarray, v_star: np.ndarray, z: float) -> float:
    """Deflection angle G(z / |v - v_star|^gamma)."""
    x = float(np.linalg.norm(np.asarray(v, dtype=float) - np.asarray(v_star, dtype=float)))
    if x == 0.0:
        raise KernelDomainError("theta is undefined for coincident velocities")
    return float(G_of(spec, table, z / x ** spec.gamma))


def g_difference_l2(spec: KernelSpec, table: RateTable, x: float, y: float) -> float:
    """int_0^inf (G(z/x) - G(z/y))^2 dz."""
    if x <= 0.0 or y <= 0.0:
        raise KernelDomainError(f"x and y must be positive, got {x}, {y}")
    if x == y:
        return 0.0

    def integrand(z):
        if z <= 0.0:
            return 0.0
        return (table.invert(z / x) - table.invert(z / y)) ** 2

    # split where the larger argument leaves the flat region near pi/2
    split = max(x, y) * table.H_max
    head, _ = integrate.quad(integrand, 0.0, split, epsabs=1e-14, epsrel=1e-10, limit=400)
    tail, _ = integrate.quad(integrand, split, np.inf, epsabs=1e-14, epsrel=1e-10, limit=400)
    return head + tail


def g_squared_integral(spec: KernelSpec, table: RateTable, z_max: float = np.inf) -> float:
    """int_0^{z_max} G(z)^2 dz; finite as z_max -> infinity since G(z)^2 ~ z^{-2/nu}."""
    value, _ = integrate.quad(lambda z: table.invert(z) ** 2 if z > 0 else HALF_PI ** 2,
                              0.0, z_max, epsabs=1e-13, epsrel=1e-10, limit=400)
    return value


def g_tail_integral(spec: KernelSpec, table: RateTable) -> float:
    """int_0^inf z |d/dz (1 - cos G(z))| dz = int_0^inf z sin G(z) / b(cos G(z)) dz."""
    def integrand(z):
        if z <= 0.0:
            return 0.0
        theta = table.invert(z)
        return z * math.sin(theta) / beta_density(spec, theta)

    value, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-10, limit=400)
    return value
