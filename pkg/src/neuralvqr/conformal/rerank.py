"""
Discrete OT re-ranking of calibration ranks onto the uniform unit ball
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..engine.reference import sample_uniform_ball
from ..types.conformal import RerankRecord
from ..types.errors import ShapeMismatchError
from .assignment import match_points

logger = logging.getLogger(__name__)

QUERY_CHUNK = 256

ReferenceSampler = Callable[[np.random.Generator, int, int], np.ndarray]


@dataclass
class RerankMap:
    """Source ranks paired with reference points by an optimal permutation"""
    source: np.ndarray
    reference: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=int)
        if self.source.shape != self.reference.shape or self.sigma.shape != (self.source.shape[0],):
            raise ShapeMismatchError("re-ranking map: source, reference and sigma sizes differ")

    @property
    def d(self) -> int:
        return self.source.shape[1]

    def to_record(self) -> RerankRecord:
        return RerankRecord(source=self.source.tolist(), reference=self.reference.tolist(), sigma=self.sigma.tolist())

    @classmethod
    def from_record(cls, record: RerankRecord) -> "RerankMap":
        return cls(np.asarray(record.source), np.asarray(record.reference), np.asarray(record.sigma))


def fit_rerank(ranks: np.ndarray, seed: int = 0, sampler: Optional[ReferenceSampler] = None) -> RerankMap:
    """Pair the ranks with as many uniform unit-ball draws at minimal squared cost"""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.ndim != 2 or ranks.shape[0] < 1:
        raise ShapeMismatchError(f"fit_rerank needs a nonempty (n, d) array, got {ranks.shape}")
    n, d = ranks.shape
    rng = np.random.default_rng(seed)
    reference = (sampler or sample_uniform_ball)(rng, n, d)
    sigma, total = match_points(ranks, reference)
    logger.debug(f"re-ranking fitted on {n} points, mean squared displacement {total / n:.4g}")
    return RerankMap(ranks, reference, sigma)


def apply_rerank(rerank: RerankMap, u: np.ndarray) -> np.ndarray:
    """Reference partner of the nearest source point (ties go to the lowest index)"""
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    U = u.reshape(-1, rerank.d)
    nearest = np.empty(U.shape[0], dtype=int)
    for start in range(0, U.shape[0], QUERY_CHUNK):
        diff = U[start:start + QUERY_CHUNK, None, :] - rerank.source[None, :, :]
        nearest[start:start + QUERY_CHUNK] = np.argmin(np.einsum("qnd,qnd->qn", diff, diff), axis=1)
    out = rerank.reference[rerank.sigma[nearest]]
    return out[0] if single else out
