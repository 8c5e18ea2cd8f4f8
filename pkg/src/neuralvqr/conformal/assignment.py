"""
Square linear assignment on squared Euclidean costs

Shared by exact W2 and the re-ranking map. scipy's solver is a
shortest-augmenting-path (Jonker-Volgenant family) exact method.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..types.errors import ShapeMismatchError

logger = logging.getLogger(__name__)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise ||a_i - b_j||^2, clipped at 0"""
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def solve_assignment(cost: np.ndarray) -> Tuple[np.ndarray, float]:
    """Permutation sigma minimizing sum_i cost[i, sigma[i]], and that minimum"""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeMismatchError(f"assignment needs a square cost matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("assignment costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    sigma = np.empty(cost.shape[0], dtype=int)
    sigma[rows] = cols
    total = float(cost[rows, cols].sum())
    logger.debug(f"assignment of size {cost.shape[0]} solved, total cost {total:.6g}")
    return sigma, total


def match_points(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, float]:
    """Optimal pairing of two equal-size clouds under squared Euclidean cost"""
    if A.shape != B.shape:
        raise ShapeMismatchError(f"cannot match point clouds of shapes {A.shape} and {B.shape}")
    return solve_assignment(squared_distances(A, B))
