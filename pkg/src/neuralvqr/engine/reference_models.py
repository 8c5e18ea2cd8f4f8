"""
Closed-form rank models used as exact oracles
"""

from typing import Optional, Tuple

import numpy as np

from ..autodiff import as_dense
from ..types.models import ReferenceLaw
from .model import MapResult, _rows


class AffineRankModel:
    """u = A (y - b), A symmetric positive definite, with Gaussian reference; Y | X ~ N(b, A^-2) for every x"""

    reference = ReferenceLaw.GAUSSIAN

    def __init__(self, A: np.ndarray, b: Optional[np.ndarray] = None, d_x: int = 0):
        self.A = as_dense(A)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"affine rank model needs a square matrix, got {self.A.shape}")
        # the gradient of a convex quadratic: symmetric positive definite
        if not np.allclose(self.A, self.A.T, atol=1e-12) or np.linalg.eigvalsh(self.A).min() <= 0:
            raise ValueError("affine rank model needs a symmetric positive definite matrix")
        self.b = np.zeros(self.A.shape[0]) if b is None else as_dense(b).reshape(-1)
        self._A_inv = np.linalg.inv(self.A)
        self._d_x = d_x

    @classmethod
    def identity(cls, d: int, d_x: int = 0) -> "AffineRankModel":
        return cls(np.eye(d), d_x=d_x)

    @property
    def d_y(self) -> int:
        return self.A.shape[0]

    @property
    def d_x(self) -> int:
        return self._d_x

    def rank(self, Y, X=None) -> MapResult:
        Y = _rows(self.d_y, Y)
        return MapResult.exact((Y - self.b) @ self.A.T)

    def quantile(self, U, X=None) -> MapResult:
        U = _rows(self.d_y, U)
        return MapResult.exact(U @ self._A_inv.T + self.b)

    def rank_jacobian_batch(self, Y, X=None) -> Tuple[np.ndarray, np.ndarray]:
        Y = _rows(self.d_y, Y)
        n = Y.shape[0]
        return np.broadcast_to(self.A, (n,) + self.A.shape).copy(), np.ones(n, dtype=bool)

    def sample(self, X, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(rng.standard_normal((n, self.d_y))).values
