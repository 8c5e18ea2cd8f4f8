"""
L2 unexplained variance against a ground-truth map

For n_x conditions and n_u ranks, each (x, u) pair contributes
    ||Q(u, x) - Q_hat(u, x)|| / ||mean_u' Q(u', x) - Q(u, x)||
and the metric is the mean over all n_x * n_u pairs. The rank direction does
the same with u = Q^-1(y, x) for y = Q(u, x).
"""

import logging
from typing import Optional

import numpy as np

from ..engine.model import RankModel
from ..engine.reference import sample_reference
from ..types.errors import DegenerateInputError, ShapeMismatchError
from ..types.metrics import MetricReport

logger = logging.getLogger(__name__)

DENOMINATOR_EPS = 1e-12


def unexplained_variance_ratio(truth: np.ndarray, estimate: np.ndarray) -> float:
    """truth, estimate: (n_x, n_u, d) images of the same (x, u) grid"""
    if truth.shape != estimate.shape or truth.ndim != 3:
        raise ShapeMismatchError(f"L2-UV needs matching (n_x, n_u, d) arrays, got {truth.shape} and {estimate.shape}")
    centered = np.linalg.norm(truth.mean(axis=1, keepdims=True) - truth, axis=2)
    scale = max(1.0, float(np.max(np.abs(truth))))
    if np.any(centered <= DENOMINATOR_EPS * scale):
        raise DegenerateInputError("L2-UV denominator vanishes: the truth map is constant in u",
                                   code="degenerate_truth_map")
    errors = np.linalg.norm(truth - estimate, axis=2)
    return float(np.mean(errors / centered))


def _grid(X: np.ndarray, n_u: int) -> np.ndarray:
    return np.repeat(X, n_u, axis=0)


def l2_unexplained_variance(truth: RankModel, model: RankModel, X: np.ndarray, n_u: int = 1000,
                            seed: int = 0, direction: str = "quantile") -> float:
    """L2-UV over the given conditions X (n_x, d_x) and n_u fresh reference draws"""
    if direction not in ("quantile", "rank"):
        raise ValueError(f"direction must be 'quantile' or 'rank', got {direction!r}")
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64).reshape(-1, truth.d_x)
    n_x, d = X.shape[0], truth.d_y
    U = sample_reference(truth.reference, rng, n_u, d)
    U_grid = np.tile(U, (n_x, 1))
    X_grid = _grid(X, n_u)
    Y_true = truth.quantile(U_grid, X_grid).values
    if direction == "quantile":
        target, estimate = Y_true, model.quantile(U_grid, X_grid).values
    else:
        ranks = model.rank(Y_true, X_grid)
        if not np.all(ranks.converged):
            logger.warning(f"L2-UV: {int(np.sum(~ranks.converged))} rank solves did not converge")
        target, estimate = U_grid, ranks.values
    ratio = unexplained_variance_ratio(target.reshape(n_x, n_u, d), estimate.reshape(n_x, n_u, d))
    logger.info(f"L2-UV ({direction}) over {n_x} x {n_u} pairs: {ratio:.4f}")
    return ratio


def l2_uv_report(truth: RankModel, model: RankModel, X: np.ndarray, n_u: int = 1000, seed: int = 0,
                 direction: str = "quantile", name: Optional[str] = None) -> MetricReport:
    X = np.asarray(X, dtype=np.float64).reshape(-1, truth.d_x)
    value = l2_unexplained_variance(truth, model, X, n_u, seed, direction)
    return MetricReport(metric=name or f"l2_uv_{direction}", value=value,
                        config={"n_x": X.shape[0], "n_u": n_u, "direction": direction}, seed=seed)
