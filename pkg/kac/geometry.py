"""
Collision geometry: the frame map iota, the tangent map Gamma, the collision
displacement a (and its cutoff a_K), and the azimuth rotation used to couple
two collision processes.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from kac import fastloop
from kac.errors import SizeMismatchError, ZeroVectorError
from kac.fastloop import COLINEAR_TOL
from kac.kernels import KernelSpec, RateTable


@dataclass(frozen=True, eq=False)
class Frame:
    """
    iota(v): d x (d-1) matrix whose columns are orthogonal, each of norm |v|,
    and orthogonal to v.
    """
    columns: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.columns[:, 0]))

    def unit(self) -> np.ndarray:
        return self.columns / self.norm

    def gram(self, v: np.ndarray) -> np.ndarray:
        basis = np.column_stack([np.asarray(v, dtype=float), self.columns]) / self.norm
        return basis.T @ basis


@dataclass(frozen=True, eq=False)
class Rotation:
    """
    Isometry R of the azimuth sphere, with the X-adapted alignment P_X.

    For phi in S^{d-2} let phi_1 = phi . (P_X e_1). Then
    Gamma(X, phi) . Gamma(Y, R phi) = phi_1^2 (X.Y) + (1 - phi_1^2)|X||Y|.
    """
    matrix: np.ndarray
    alignment: np.ndarray

    def apply(self, phi: np.ndarray) -> np.ndarray:
        return self.matrix @ phi

    def adapted_first_coordinate(self, phi: np.ndarray) -> float:
        return float(np.asarray(phi) @ self.alignment[:, 0])


def _as_velocity(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


def frame_of(v: np.ndarray) -> Frame:
    """
    Householder completion of v/|v| in the half-space where the first nonzero
    coordinate is positive; the other half-space is reached by oddness, so
    frame_of(-v) == -frame_of(v) exactly.
    """
    v = _as_velocity(v)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError("frame_of needs a nonzero vector")
    first = np.flatnonzero(v)[0]
    sign = 1.0 if v[first] > 0 else -1.0
    u = (sign / norm) * v
    # w = u - e_1, first coordinate written without cancellation
    w = u.copy()
    w[0] = -float(u[1:] @ u[1:]) / (1.0 + u[0])
    ww = float(w @ w)
    d = v.size
    householder = np.eye(d)
    if ww > 0.0:
        householder -= (2.0 / ww) * np.outer(w, w)
    return Frame(columns=(sign * norm) * householder[:, 1:])


def _tangent_args(v, phi, caller: str) -> Tuple[np.ndarray, np.ndarray]:
    v = np.ascontiguousarray(v, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    if not np.any(v):
        raise ZeroVectorError(f"{caller} needs a nonzero vector")
    if v.ndim != 1 or phi.shape != (v.size - 1,):
        raise SizeMismatchError(f"{caller}: azimuth of shape {phi.shape} does not fit a vector of shape {v.shape}")
    return v, phi


def gamma_of(v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Gamma(v, phi) = sum_j phi_j iota_j(v), applied without forming the frame."""
    v, phi = _tangent_args(v, phi, "gamma_of")
    out = np.empty_like(v)
    fastloop.tangent_into(v, phi, out)
    return out


def uniform_azimuth(rng: np.random.Generator, d: int, size: Optional[int] = None) -> np.ndarray:
    """Uniform points on S^{d-2} as normalised Gaussian vectors."""
    shape = (d - 1,) if size is None else (size, d - 1)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def displacement_at_angle(u: np.ndarray, theta: float, phi: np.ndarray) -> np.ndarray:
    """a = -(1 - cos theta)/2 u + sin(theta)/2 Gamma(u, phi) for u = v - v_star != 0."""
    u, phi = _tangent_args(u, phi, "displacement_at_angle")
    out = np.empty_like(u)
    fastloop.displacement_into(u, float(theta), phi, out)
    return out


def displacement(spec: KernelSpec, table: RateTable, v: np.ndarray, v_star: np.ndarray,
                 z: float, phi: np.ndarray) -> np.ndarray:
    """Collision displacement a(v, v_star, z, phi); zero when v == v_star."""
    u = _as_velocity(v) - _as_velocity(v_star)
    x = float(np.linalg.norm(u))
    if x == 0.0:
        return np.zeros_like(u)
    theta = table.invert(z / x ** spec.gamma)
    return displacement_at_angle(u, theta, phi)


def displacement_cutoff(spec: KernelSpec, table: RateTable, v: np.ndarray, v_star: np.ndarray,
                        z: float, phi: np.ndarray, K: float) -> np.ndarray:
    """a_K = a 1(z <= K |v - v_star|^gamma)."""
    u = _as_velocity(v) - _as_velocity(v_star)
    x = float(np.linalg.norm(u))
    if x == 0.0 or z > K * x ** spec.gamma:
        return np.zeros_like(u)
    return displacement_at_angle(u, table.invert(z / x ** spec.gamma), phi)


def apply_collision(v: np.ndarray, v_star: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(v + a, v_star - a); conserves momentum and energy for any a from displacement."""
    return _as_velocity(v) + a, _as_velocity(v_star) - a


def post_collision(spec: KernelSpec, table: RateTable, v: np.ndarray, v_star: np.ndarray,
                   z: float, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Post-collisional pair (v', v'_star) and the deflection angle (nan if v == v_star)."""
    u = _as_velocity(v) - _as_velocity(v_star)
    x = float(np.linalg.norm(u))
    if x == 0.0:
        return _as_velocity(v).copy(), _as_velocity(v_star).copy(), float("nan")
    theta = table.invert(z / x ** spec.gamma)
    v_new, v_star_new = apply_collision(v, v_star, displacement_at_angle(u, theta, phi))
    return v_new, v_star_new, theta


def tanaka_rotation(X: np.ndarray, Y: np.ndarray) -> Rotation:
    """
    R(X, Y) = P_Y P_X^{-1}.

    P_X maps e_k to the coordinates of j^k_X / |X| in the iota(X) frame, where
    j^1_X, j^1_Y are the +90 degree rotations of X, Y inside span(X, Y)
    (oriented by the ordered pair (X, Y)) and j^k for k >= 2 share an
    orthonormal basis of the complement of that plane.
    """
    X, Y = _as_velocity(X), _as_velocity(Y)
    nx, ny = float(np.linalg.norm(X)), float(np.linalg.norm(Y))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVectorError("tanaka_rotation needs nonzero X and Y")
    a_x = frame_of(X).columns / nx
    a_y = frame_of(Y).columns / ny

    e = X / nx
    y_par = float(Y @ e)
    y_perp = Y - y_par * e
    perp_norm = float(np.linalg.norm(y_perp))
    if perp_norm < COLINEAR_TOL * ny:
        j_x = a_x[:, 0]
        j_y = (1.0 if y_par >= 0 else -1.0) * j_x
        rest = a_x[:, 1:]
    else:
        f = y_perp / perp_norm
        y_hat = Y / ny
        j_x = f
        j_y = float(y_hat @ e) * f - float(y_hat @ f) * e
        # Householder QR completes (e, f) to an orthonormal basis
        rest = np.linalg.qr(np.column_stack([e, f]), mode="complete")[0][:, 2:]

    p_x = a_x.T @ np.column_stack([j_x, rest])
    if np.array_equal(X, Y):
        return Rotation(matrix=np.eye(X.size - 1), alignment=p_x)
    p_y = a_y.T @ np.column_stack([j_y, rest])
    return Rotation(matrix=p_y @ p_x.T, alignment=p_x)


def rotate_azimuth(X: np.ndarray, Y: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """R(X, Y) phi in closed form, equal to tanaka_rotation(X, Y).apply(phi) up to rounding."""
    X, phi = _tangent_args(X, phi, "rotate_azimuth")
    Y, _ = _tangent_args(Y, phi, "rotate_azimuth")
    if np.array_equal(X, Y):
        return phi.copy()
    out = np.empty_like(phi)
    fastloop.rotate_azimuth_into(X, Y, phi, out)
    return out
