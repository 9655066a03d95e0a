"""
Ensemble summaries and trend checks shared by the experiments.
"""

import math
from typing import Sequence, Tuple

import numpy as np


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and its standard error; the error is nan for a single value."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), math.nan
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def binomial_stderr(probability: float, trials: int) -> float:
    if trials <= 0:
        return math.nan
    return math.sqrt(max(probability * (1.0 - probability), 0.0) / trials)


def batch_means(series: Sequence[float], batches: int = 8) -> Tuple[float, float]:
    """Mean of a correlated series with a batch-means standard error."""
    arr = np.asarray(series, dtype=float)
    if arr.size < 2 * batches:
        return mean_and_stderr(arr)
    chunks = np.array_split(arr, batches)
    return float(arr.mean()), mean_and_stderr([chunk.mean() for chunk in chunks])[1]


def nonincreasing_within(values: Sequence[float], stderrs: Sequence[float], sigmas: float = 2.0) -> bool:
    """True when no step up exceeds ``sigmas`` combined standard errors."""
    for k in range(1, len(values)):
        se = math.sqrt(np.nan_to_num(stderrs[k - 1]) ** 2 + np.nan_to_num(stderrs[k]) ** 2)
        if values[k] > values[k - 1] + sigmas * se:
            return False
    return True


def frozen_linear_rate(times: Sequence[float], ratios: np.ndarray, sigmas: float = 2.0) -> float:
    """
    Smallest C >= 0 with mean + ``sigmas`` stderr of ``ratios`` (replicas x
    times, each row divided by its value at t = 0) below 1 + C t at every t > 0.
    """
    arr = np.atleast_2d(np.asarray(ratios, dtype=float))
    rates = []
    for col, t in enumerate(times):
        if t <= 0:
            continue
        mean, se = mean_and_stderr(arr[:, col])
        rates.append((mean + sigmas * np.nan_to_num(se) - 1.0) / t)
    return max(max(rates, default=0.0), 0.0)


def linear_rate_holds(times: Sequence[float], ratios: np.ndarray, rate: float, sigmas: float = 2.0) -> bool:
    """True when no grid time has mean - ``sigmas`` stderr of ``ratios`` above 1 + rate t."""
    arr = np.atleast_2d(np.asarray(ratios, dtype=float))
    for col, t in enumerate(times):
        mean, se = mean_and_stderr(arr[:, col])
        if mean - sigmas * np.nan_to_num(se) > 1.0 + rate * t + 1e-12:
            return False
    return True
