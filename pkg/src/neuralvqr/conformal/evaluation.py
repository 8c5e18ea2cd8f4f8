"""
Coverage, worst-slab coverage and Monte Carlo volume of prediction sets
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ..engine.model import RankModel
from ..types.conformal import CalibrationArtifact, Membership
from ..types.errors import DegenerateInputError
from .calibration import membership

logger = logging.getLogger(__name__)

WSC_DIRECTIONS = 1000
WSC_GRID = 50
WSC_DELTA = 0.1
VOLUME_POINTS = 100_000
VOLUME_CONDITIONS = 10
BOX_INFLATION = 0.25


def marginal_coverage(flags: np.ndarray) -> float:
    """Fraction of points known to be inside; unknown memberships count as misses"""
    if flags.size == 0:
        raise ValueError("coverage needs a nonempty test set")
    return float(np.mean(flags == Membership.IN.value))


def worst_slab_coverage(X: np.ndarray, covered: np.ndarray, directions: int = WSC_DIRECTIONS,
                        delta: float = WSC_DELTA, grid: int = WSC_GRID, seed: int = 0) -> float:
    """Minimum coverage over slabs {x: a <= v'x <= b} holding at least delta of the test mass.

    Slab endpoints run over ``grid`` empirical quantiles of each projection.
    Without conditioning inputs this is the marginal coverage.
    """
    covered = np.asarray(covered, dtype=np.float64)
    n = covered.shape[0]
    if n == 0:
        raise ValueError("worst-slab coverage needs a nonempty test set")
    X = np.asarray(X, dtype=np.float64).reshape(n, -1)
    if X.shape[1] == 0:
        return float(covered.mean())
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((directions, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    cuts = np.unique(np.round(np.linspace(0, n, grid + 1)).astype(int))
    lo, hi = np.meshgrid(cuts, cuts, indexing="ij")
    mass = hi - lo
    valid = mass >= max(1, math.ceil(delta * n))
    if not np.any(valid):
        return float(covered.mean())
    worst = 1.0
    projections = X @ V.T
    for j in range(directions):
        order = np.argsort(projections[:, j], kind="stable")
        prefix = np.concatenate([[0.0], np.cumsum(covered[order])])
        hits = prefix[hi] - prefix[lo]
        worst = min(worst, float(np.min(hits[valid] / mass[valid])))
    return worst


def bounding_box(Y: np.ndarray, inflation: float = BOX_INFLATION) -> Tuple[np.ndarray, np.ndarray]:
    """Data box widened by ``inflation`` of its width in every dimension, centered"""
    Y = np.asarray(Y, dtype=np.float64)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    width = hi - lo
    if np.any(width <= 0):
        raise DegenerateInputError("prediction-set volume: the bounding box has zero width",
                                   code="degenerate_bounding_box")
    pad = 0.5 * inflation * width
    return lo - pad, hi + pad


def estimate_volume(member_fn: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray,
                    n_points: int = VOLUME_POINTS, seed: int = 0) -> float:
    """Box volume times the fraction of uniform draws inside; unknown counts as inside.

    The fraction is floored at 0.5 / n_points so an empty hit count stays finite in log space.
    """
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    if np.any(hi - lo <= 0):
        raise DegenerateInputError("prediction-set volume: the bounding box has zero width",
                                   code="degenerate_bounding_box")
    rng = np.random.default_rng(seed)
    points = rng.uniform(lo, hi, size=(n_points, lo.shape[0]))
    flags = member_fn(points)
    fraction = max(float(np.mean(flags != Membership.OUT.value)), 0.5 / n_points)
    return fraction * float(np.prod(hi - lo))


@dataclass
class SetEvaluation:
    coverage: float
    wsc: float
    log_volume_per_dim: float
    n_test: int
    unknown: int


def evaluate_sets(model: RankModel, artifact: CalibrationArtifact, Y_test, X_test=None,
                  box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  volume_points: int = VOLUME_POINTS, volume_conditions: int = VOLUME_CONDITIONS,
                  wsc_directions: int = WSC_DIRECTIONS, delta: float = WSC_DELTA,
                  seed: int = 0) -> SetEvaluation:
    """Marginal coverage, worst-slab coverage and mean log-volume / d_y over test conditions"""
    Y_test = np.asarray(Y_test, dtype=np.float64).reshape(-1, model.d_y)
    n = Y_test.shape[0]
    if n == 0:
        raise ValueError("evaluate_sets needs a nonempty test set")
    X_test = np.zeros((n, 0)) if X_test is None else np.asarray(X_test, dtype=np.float64).reshape(n, -1)
    lo, hi = box if box is not None else bounding_box(Y_test)

    flags = membership(model, artifact, Y_test, X_test if model.d_x else None)
    coverage = marginal_coverage(flags)
    wsc = worst_slab_coverage(X_test, flags == Membership.IN.value, wsc_directions, delta, seed=seed)

    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=min(volume_conditions, n), replace=False)
    log_volumes = []
    for i, idx in enumerate(picks):
        x = X_test[idx]

        def member_fn(points, x=x):
            conds = np.broadcast_to(x, (points.shape[0], x.shape[0])) if model.d_x else None
            return membership(model, artifact, points, conds)
        volume = estimate_volume(member_fn, lo, hi, volume_points, seed=seed + i)
        log_volumes.append(math.log(volume) / model.d_y)

    unknown = int(np.sum(flags == Membership.UNKNOWN.value))
    result = SetEvaluation(coverage, wsc, float(np.mean(log_volumes)), n, unknown)
    logger.info(
        f"{artifact.method.value} at alpha={artifact.alpha}: coverage {coverage:.4f}, "
        f"worst-slab {wsc:.4f}, log-volume/d_y {result.log_volume_per_dim:.4f} (n_test={n}, unknown={unknown})"
    )
    return result
