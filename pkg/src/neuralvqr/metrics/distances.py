"""
Wasserstein-2 distances between point clouds
"""

import logging
import math
from typing import Optional

import numpy as np

from ..conformal.assignment import match_points
from ..types.errors import ShapeMismatchError
from ..types.metrics import MetricReport

logger = logging.getLogger(__name__)

W2_EXACT_MAX_N = 2000
DEFAULT_PROJECTIONS = 256


def _cloud(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points.reshape(-1, 1) if points.ndim == 1 else points


def wasserstein2_exact(A, B) -> float:
    """sqrt(min over permutations of the mean squared pairing cost)"""
    A, B = _cloud(A), _cloud(B)
    if A.shape != B.shape:
        raise ShapeMismatchError(f"exact W2 needs equal-size clouds, got {A.shape} and {B.shape}")
    if A.shape[0] > W2_EXACT_MAX_N:
        raise ValueError(f"exact W2 is limited to n <= {W2_EXACT_MAX_N}, got {A.shape[0]}")
    if A.shape[0] == 0:
        return 0.0
    _, total = match_points(A, B)
    return math.sqrt(max(total / A.shape[0], 0.0))


def _sorted_w2_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared 1-D W2 per column; unequal sizes use min(n_a, n_b) common quantile levels"""
    if a.shape[0] == b.shape[0]:
        return np.mean((np.sort(a, axis=0) - np.sort(b, axis=0)) ** 2, axis=0)
    n = min(a.shape[0], b.shape[0])
    levels = (np.arange(n) + 0.5) / n
    qa = np.quantile(a, levels, axis=0)
    qb = np.quantile(b, levels, axis=0)
    return np.mean((qa - qb) ** 2, axis=0)


def random_directions(rng: np.random.Generator, projections: int, d: int) -> np.ndarray:
    directions = rng.standard_normal((projections, d))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def sliced_w2(A, B, projections: int = DEFAULT_PROJECTIONS, seed: int = 0,
              directions: Optional[np.ndarray] = None) -> float:
    """sqrt of the mean squared 1-D W2 over random unit directions"""
    A, B = _cloud(A), _cloud(B)
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"sliced W2 needs equal dimensions, got {A.shape[1]} and {B.shape[1]}")
    if directions is None:
        if projections < 1:
            raise ValueError("sliced W2 needs at least one projection")
        directions = random_directions(np.random.default_rng(seed), projections, A.shape[1])
    per_direction = _sorted_w2_squared(A @ directions.T, B @ directions.T)
    return math.sqrt(float(np.mean(per_direction)))


def w2_report(A, B, seed: Optional[int] = None) -> MetricReport:
    A = _cloud(A)
    return MetricReport(metric="w2", value=wasserstein2_exact(A, B), config={"n": A.shape[0]}, seed=seed)


def sliced_w2_report(A, B, projections: int = DEFAULT_PROJECTIONS, seed: int = 0) -> MetricReport:
    A, B = _cloud(A), _cloud(B)
    return MetricReport(
        metric="sliced_w2", value=sliced_w2(A, B, projections, seed),
        config={"projections": projections, "n_a": A.shape[0], "n_b": B.shape[0]}, seed=seed,
    )
