"""
Weighted cost d_p, the transport semimetric W_p between equal-size atom
clouds, the usual Wasserstein metrics w_p, and the comparison inequalities
between them.
"""

import logging
import math
from collections import deque
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from kac.errors import AssignmentTooLarge, ParameterError, SizeMismatchError
from kac.measure import EmpiricalMeasure
from kac.moments import lambda_k_pair

logger = logging.getLogger(__name__)

EXACT_LIMIT = 4096

__all__ = [
    "EmpiricalMeasure", "d_p", "delta_p", "d_p_cost_matrix", "W_p", "w_p", "w1", "w2",
    "optimal_plan", "auction_assignment", "check_comparisons", "ComparisonReport",
    "lipschitz_lower_bound",
]


def _norm_power(x: np.ndarray, p: float) -> np.ndarray:
    # |v|^0 is 1 for every v, including v = 0
    return np.power(np.linalg.norm(x, axis=-1), p)


def d_p(v: np.ndarray, w: np.ndarray, p: float) -> float:
    """d_p(v, w) = (1 + |v|^p + |w|^p)^{1/2} |v - w|."""
    if p < 0:
        raise ParameterError(f"p must be >= 0, got {p}")
    v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    weight = 1.0 + _norm_power(v, p) + _norm_power(w, p)
    return float(np.sqrt(weight) * np.linalg.norm(v - w))


def delta_p(v: np.ndarray, w: np.ndarray, p: float) -> float:
    """The metric |(1 + |v|^p)^{1/2} v - (1 + |w|^p)^{1/2} w| comparable to d_p."""
    v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    lift_v = math.sqrt(1.0 + float(_norm_power(v, p))) * v
    lift_w = math.sqrt(1.0 + float(_norm_power(w, p))) * w
    return float(np.linalg.norm(lift_v - lift_w))


def d_p_cost_matrix(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """c_ij = d_p(a_i, b_j)^2."""
    weight = 1.0 + _norm_power(a, p)[:, None] + _norm_power(b, p)[None, :]
    return weight * cdist(a, b, metric="sqeuclidean")


def _check_sizes(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.n != nu.n or mu.d != nu.d:
        raise SizeMismatchError(f"clouds differ in shape: {mu.atoms.shape} vs {nu.atoms.shape}")


def auction_assignment(cost: np.ndarray, eps: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Forward auction with epsilon scaling; the returned assignment costs at
    most n * eps more than the optimum.
    """
    n = cost.shape[0]
    benefit = -np.asarray(cost, dtype=float)
    spread = float(np.ptp(benefit)) or 1.0
    target = eps if eps is not None else 1e-6 * spread / n
    prices = np.zeros(n)
    step = max(0.25 * spread, target)
    while True:
        owner = np.full(n, -1)
        assigned = np.full(n, -1)
        queue = deque(range(n))
        while queue:
            i = queue.popleft()
            values = benefit[i] - prices
            best = int(np.argmax(values))
            top = values[best]
            values[best] = -np.inf
            runner_up = float(values.max()) if n > 1 else top
            prices[best] += top - runner_up + step
            previous = owner[best]
            if previous >= 0:
                assigned[previous] = -1
                queue.append(previous)
            owner[best] = i
            assigned[i] = best
        if step <= target:
            break
        step = max(step / 5.0, target)
    return np.arange(n), assigned


def optimal_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                 cost_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 exact: bool = True) -> Tuple[np.ndarray, np.ndarray, float]:
    """Optimal matching of two equal-size clouds; returns (rows, cols, mean cost)."""
    _check_sizes(mu, nu)
    if exact and mu.n > EXACT_LIMIT:
        raise AssignmentTooLarge(f"exact assignment is limited to {EXACT_LIMIT} atoms, got {mu.n}")
    cost = cost_fn(mu.atoms, nu.atoms)
    if exact:
        rows, cols = linear_sum_assignment(cost)
    else:
        rows, cols = auction_assignment(cost)
    return rows, cols, float(cost[rows, cols].mean())


def W_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, exact: bool = True) -> float:
    """W_p(mu, nu) = (min over matchings of mean d_p^2)^{1/2}."""
    if p < 0:
        raise ParameterError(f"p must be >= 0, got {p}")
    _, _, mean_cost = optimal_plan(mu, nu, lambda a, b: d_p_cost_matrix(a, b, p), exact)
    return math.sqrt(max(mean_cost, 0.0))


def w_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, exact: bool = True) -> float:
    """The usual Wasserstein_p distance, p >= 1."""
    if p < 1:
        raise ParameterError(f"w_p needs p >= 1, got {p}")
    _, _, mean_cost = optimal_plan(mu, nu, lambda a, b: cdist(a, b) ** p, exact)
    return max(mean_cost, 0.0) ** (1.0 / p)


def w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    return w_p(mu, nu, 1.0)


def w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    _, _, mean_cost = optimal_plan(mu, nu, lambda a, b: cdist(a, b, metric="sqeuclidean"))
    return math.sqrt(max(mean_cost, 0.0))


def lipschitz_lower_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure, rng: np.random.Generator,
                          functions: int = 100, pieces: int = 4) -> float:
    """
    max over random convex piecewise-linear f = max_k (a_k . v + b_k), |a_k| <= 1,
    of <f, mu - nu>; a lower bound for w_1 by duality.
    """
    _check_sizes(mu, nu)
    best = -math.inf
    for _ in range(functions):
        slopes = rng.standard_normal((pieces, mu.d))
        slopes *= (rng.random((pieces, 1)) / np.linalg.norm(slopes, axis=1, keepdims=True))
        offsets = rng.standard_normal(pieces)

        def f(x):
            return np.max(x @ slopes.T + offsets, axis=1)

        best = max(best, mu.integrate(f) - nu.integrate(f))
    return best


class ComparisonReport(BaseModel):
    p: float
    p_prime: float
    alpha: float
    w1: float
    W_p: float
    lambda_p_prime: float
    lower_holds: bool
    interpolation_ratio: float
    upper_holds: bool
    triangle_ratio: float
    w_p_comparison_ratio: Optional[float] = None
    w_p2_comparison_ratio: Optional[float] = None


def check_comparisons(mu: EmpiricalMeasure, nu: EmpiricalMeasure, xi: EmpiricalMeasure,
                      p: float, p_prime: float, alpha: Optional[float] = None) -> ComparisonReport:
    """
    Evaluate w1 <= W_p <= w1^alpha Lambda_{p'}(mu, nu), the relaxed triangle
    ratio W_p(mu, nu) / (W_p(mu, xi) + W_p(xi, nu)), and the W_p versus
    w_p Lambda_{p+2} and w_{p+2}^{(p+2)/2} ratios.
    """
    _check_sizes(mu, nu)
    _check_sizes(mu, xi)
    if p_prime <= p + 2:
        raise ParameterError(f"p' must exceed p + 2, got p={p}, p'={p_prime}")
    if alpha is None:
        alpha = (p_prime - p - 2.0) / (2.0 * p_prime)
    lower = w1(mu, nu)
    middle = W_p(mu, nu, p)
    moment = lambda_k_pair(mu, nu, p_prime)
    upper = lower ** alpha * moment
    via_xi = W_p(mu, xi, p) + W_p(xi, nu, p)
    report = ComparisonReport(
        p=p, p_prime=p_prime, alpha=alpha, w1=lower, W_p=middle, lambda_p_prime=moment,
        lower_holds=lower <= middle * (1.0 + 1e-12) + 1e-15,
        interpolation_ratio=middle / upper if upper > 0 else 0.0,
        upper_holds=middle <= upper * (1.0 + 1e-12) + 1e-15,
        triangle_ratio=middle / via_xi if via_xi > 0 else 0.0,
    )
    if middle > 0:
        if p >= 1:
            report.w_p_comparison_ratio = middle / (w_p(mu, nu, p) * lambda_k_pair(mu, nu, p + 2.0))
        report.w_p2_comparison_ratio = w_p(mu, nu, p + 2.0) ** (0.5 * (p + 2.0)) / middle
    return report
