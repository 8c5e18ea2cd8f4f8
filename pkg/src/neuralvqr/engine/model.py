"""
Rank and quantile maps of a trained potential

QuantileModel hides which side the potential lives on. For the U-variant the
quantile map is grad_u phi and the rank map is the conjugate argmax; for the
Y-variant the rank map is grad_y psi and the quantile map is the conjugate
argmax of psi.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from ..autodiff import as_dense
from ..types.errors import ShapeMismatchError, SolveNotConvergedError
from ..types.models import Domain, ReferenceLaw, SolverSettings, Variant
from .amortizer import AmortizerParams, amortizer_predict
from .conjugate import solve_conjugate_batch
from .picnn import PicnnParams, picnn_grad_u
from .reference import reference_domain, sample_reference

logger = logging.getLogger(__name__)

JACOBIAN_MAX_DIM = 16
JACOBIAN_STEP = 1e-4


@dataclass
class MapResult:
    """Images of a batch under a rank or quantile map"""
    values: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    @classmethod
    def exact(cls, values: np.ndarray) -> "MapResult":
        n = values.shape[0]
        return cls(values, np.ones(n, dtype=bool), np.zeros(n, dtype=int))


class RankModel(Protocol):
    """What conformal calibration, metrics and serving need from a model"""
    reference: ReferenceLaw

    @property
    def d_y(self) -> int: ...

    @property
    def d_x(self) -> int: ...

    def rank(self, Y: np.ndarray, X: Optional[np.ndarray] = None) -> MapResult: ...

    def quantile(self, U: np.ndarray, X: Optional[np.ndarray] = None) -> MapResult: ...

    def rank_jacobian_batch(self, Y: np.ndarray, X: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]: ...


def _rows(d: int, points, n: Optional[int] = None) -> np.ndarray:
    points = as_dense(points)
    if points.ndim == 1:
        points = points.reshape(1, -1) if n is None else np.broadcast_to(points, (n, points.shape[0]))
    if points.ndim != 2 or points.shape[1] != d:
        raise ShapeMismatchError(f"expected rows of dimension {d}, got shape {points.shape}")
    return np.ascontiguousarray(points)


def finite_difference_jacobian(rank_fn, Y: np.ndarray, X: np.ndarray,
                               fd_step: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetrized central-difference Jacobians of a rank map, one per row.

    The step for row b is fd_step * (1 + ||y_b||) with fd_step = 1e-4 by
    default. Returns (n, d, d) Jacobians and per-row convergence flags.
    """
    n, d = Y.shape
    base = JACOBIAN_STEP if fd_step is None else fd_step
    if base <= 0:
        raise ValueError("fd_step must be positive")
    steps = base * (1.0 + np.linalg.norm(Y, axis=1))
    offsets = np.concatenate([np.eye(d), -np.eye(d)])  # (2d, d)
    points = Y[:, None, :] + steps[:, None, None] * offsets[None, :, :]
    result = rank_fn(points.reshape(n * 2 * d, d), np.repeat(X, 2 * d, axis=0))
    images = result.values.reshape(n, 2 * d, d)
    jac = (images[:, :d, :] - images[:, d:, :]) / (2.0 * steps[:, None, None])
    # jac[b, j, :] is the derivative along e_j, i.e. column j
    jac = np.transpose(jac, (0, 2, 1))
    jac = 0.5 * (jac + np.transpose(jac, (0, 2, 1)))
    ok = result.converged.reshape(n, 2 * d).all(axis=1)
    return jac, ok


class QuantileModel:
    """A trained potential together with its variant, reference law and solver"""

    def __init__(self, potential: PicnnParams, variant: Variant = Variant.U,
                 reference: ReferenceLaw = ReferenceLaw.GAUSSIAN,
                 settings: Optional[SolverSettings] = None,
                 amortizer: Optional[AmortizerParams] = None):
        self.potential = potential
        self.variant = Variant(variant)
        self.reference = ReferenceLaw(reference)
        self.settings = settings or SolverSettings()
        self.amortizer = amortizer

    @property
    def d_y(self) -> int:
        return self.potential.config.d_u

    @property
    def d_x(self) -> int:
        return self.potential.config.d_x

    @property
    def rank_domain(self) -> Domain:
        return reference_domain(self.reference)

    def _conditions(self, X, n: int) -> np.ndarray:
        if X is None:
            if self.d_x:
                raise ShapeMismatchError(f"model expects conditioning inputs of dimension {self.d_x}")
            return np.zeros((n, 0))
        return _rows(self.d_x, X, n)

    def rank(self, Y, X=None, warm_start: Optional[np.ndarray] = None,
             settings: Optional[SolverSettings] = None) -> MapResult:
        """Q^-1(y, x) row-wise"""
        Y = _rows(self.d_y, Y)
        X = self._conditions(X, Y.shape[0])
        if self.variant == Variant.Y:
            return MapResult.exact(picnn_grad_u(self.potential, Y, X))
        if warm_start is None and self.amortizer is not None:
            warm_start = amortizer_predict(self.amortizer, Y, X)
        solution = solve_conjugate_batch(self.potential, Y, X, settings or self.settings,
                                         init=warm_start, domain=self.rank_domain)
        return MapResult(solution.u_hat, solution.converged, solution.iterations)

    def quantile(self, U, X=None, settings: Optional[SolverSettings] = None) -> MapResult:
        """Q(u, x) row-wise"""
        U = _rows(self.d_y, U)
        X = self._conditions(X, U.shape[0])
        if self.variant == Variant.U:
            return MapResult.exact(picnn_grad_u(self.potential, U, X))
        solution = solve_conjugate_batch(self.potential, U, X, settings or self.settings, init=U)
        return MapResult(solution.u_hat, solution.converged, solution.iterations)

    def rank_jacobian_batch(self, Y, X=None, fd_step: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        Y = _rows(self.d_y, Y)
        if self.d_y > JACOBIAN_MAX_DIM:
            raise ShapeMismatchError(f"rank jacobian needs d_y <= {JACOBIAN_MAX_DIM}, got {self.d_y}")
        X = self._conditions(X, Y.shape[0])
        tight = self.settings.model_copy(update={"eps_norm": 1e-10, "eps_obj": 1e-15})
        base = self.rank(Y, X, settings=tight)
        warm = np.repeat(base.values, 2 * self.d_y, axis=0)

        def rank_fn(points, conditions):
            return self.rank(points, conditions, warm_start=warm, settings=tight)
        jac, ok = finite_difference_jacobian(rank_fn, Y, X, fd_step)
        return jac, ok & base.converged

    def sample(self, X, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws from the model's conditional law at a single x"""
        U = sample_reference(self.reference, rng, n, self.d_y)
        x = np.zeros(0) if X is None else as_dense(X).reshape(-1)
        return self.quantile(U, np.broadcast_to(x, (n, self.d_x))).values


def rank_jacobian(model: RankModel, y, x=None, fd_step: Optional[float] = None) -> np.ndarray:
    """Symmetrized Jacobian of the rank map at a single point"""
    if model.d_y > JACOBIAN_MAX_DIM:
        raise ShapeMismatchError(f"rank jacobian needs d_y <= {JACOBIAN_MAX_DIM}, got {model.d_y}")
    Y = _rows(model.d_y, y)
    X = None if x is None else _rows(model.d_x, x, 1)
    if isinstance(model, QuantileModel):
        jac, ok = model.rank_jacobian_batch(Y, X, fd_step)
    else:
        jac, ok = model.rank_jacobian_batch(Y, X)
    if not ok[0]:
        raise SolveNotConvergedError("rank_jacobian: an inner conjugate solve did not converge")
    return jac[0]


def rank_map(model: RankModel, y, x=None, settings: Optional[SolverSettings] = None,
             warm_start: Optional[np.ndarray] = None) -> np.ndarray:
    """Q^-1(y, x) for one point or a batch, raising if any solve fails"""
    single = as_dense(y).ndim == 1
    if isinstance(model, QuantileModel):
        if warm_start is not None:
            warm_start = as_dense(warm_start).reshape(-1, model.d_y)
        result = model.rank(y, x, warm_start=warm_start, settings=settings)
    else:
        result = model.rank(y, x)
    if not np.all(result.converged):
        raise SolveNotConvergedError(f"rank_map: {int(np.sum(~result.converged))} solve(s) did not converge")
    return result.values[0] if single else result.values
