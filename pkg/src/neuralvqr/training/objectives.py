"""
Semi-dual objectives and their parameter gradients

Exact (C-NQR / AC-NQR):
    V = E phi(P, X) + E [c'u_check - phi(u_check, X)]
where u_check maximizes u'c - phi(u, x). By Danskin the gradient treats
u_check as a constant.

Entropic (EC-NQR): the max over u is replaced by
    eps * logsumexp_j((u_j'c - phi(u_j, x)) / eps)
over m reference draws, giving a positive phase on P minus a Gibbs-weighted
negative phase on the draws.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.special import logsumexp

from ..autodiff import as_dense
from ..engine.picnn import PicnnParams, picnn_forward, picnn_value_and_grad_params
from ..engine.reference import reference_domain, sample_reference
from ..types.models import Domain, DualObjectiveEstimate, ReferenceLaw, Variant

logger = logging.getLogger(__name__)

Arrays = Dict[str, np.ndarray]


@dataclass
class VariantBatch:
    """Points entering the potential term and the conjugate term of one batch"""
    potential_points: np.ndarray
    conjugate_points: np.ndarray
    X: np.ndarray


class VariantAdapter:
    """Maps a data batch to potential/conjugate roles.

    U-variant: phi is evaluated at fresh reference draws, conjugates at the
    data. Y-variant: psi is evaluated at the data, conjugates at fresh
    reference draws, and the argmax ranges over all of R^d.
    """

    def __init__(self, variant: Variant, reference: ReferenceLaw):
        self.variant = Variant(variant)
        self.reference = ReferenceLaw(reference)

    @property
    def solve_domain(self) -> Domain:
        if self.variant == Variant.U:
            return reference_domain(self.reference)
        return Domain(kind="unbounded")

    def split(self, Y: np.ndarray, X: np.ndarray, rng: np.random.Generator) -> VariantBatch:
        U = sample_reference(self.reference, rng, Y.shape[0], Y.shape[1])
        if self.variant == Variant.U:
            return VariantBatch(U, Y, X)
        return VariantBatch(Y, U, X)


def semi_dual_value_and_grad(potential: PicnnParams, batch: VariantBatch,
                             u_check: np.ndarray) -> Tuple[DualObjectiveEstimate, Arrays]:
    """Mini-batch semi-dual estimate and its Danskin gradient (u_check held fixed)"""
    B = batch.potential_points.shape[0]
    U = np.concatenate([batch.potential_points, as_dense(u_check)])
    X = np.concatenate([batch.X, batch.X])
    weights = np.concatenate([np.full(B, 1.0 / B), np.full(B, -1.0 / B)])
    values, grads = picnn_value_and_grad_params(potential, U, X, weights)
    potential_term = float(np.mean(values[:B]))
    conjugate_term = float(np.mean(np.einsum("bd,bd->b", u_check, batch.conjugate_points) - values[B:]))
    value = potential_term + conjugate_term
    return DualObjectiveEstimate(value=value, potential_term=potential_term, conjugate_term=conjugate_term), grads


def _chunk_values(potential: PicnnParams, samples: np.ndarray, X: np.ndarray, start: int, stop: int) -> np.ndarray:
    B, _, d = samples.shape
    rows = samples[:, start:stop, :].reshape(-1, d)
    conds = np.repeat(X, stop - start, axis=0)
    return picnn_forward(potential, rows, conds).reshape(B, stop - start)


def entropic_value_and_grad(potential: PicnnParams, batch: VariantBatch, samples: np.ndarray,
                            epsilon: float, chunk: int = 128) -> Tuple[DualObjectiveEstimate, Arrays]:
    """Entropic semi-dual estimate and gradient.

    ``samples`` has shape (B, m, d): m reference draws per conjugate point.
    Potential evaluations stream over chunks of the m axis; log-sum-exp is
    taken in float64 after max-shifting.
    """
    if epsilon <= 0:
        raise ValueError("entropic objective requires epsilon > 0")
    B, m, d = samples.shape
    C, X = batch.conjugate_points, batch.X

    J = np.empty((B, m))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        phi = _chunk_values(potential, samples, X, start, stop)
        J[:, start:stop] = np.einsum("bjd,bd->bj", samples[:, start:stop, :], C) - phi
    lse = logsumexp(J / epsilon, axis=1)
    soft = epsilon * lse
    gibbs = np.exp(J / epsilon - lse[:, None])

    pot_values, grads = picnn_value_and_grad_params(
        potential, batch.potential_points, X, np.full(B, 1.0 / B)
    )
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        rows = samples[:, start:stop, :].reshape(-1, d)
        conds = np.repeat(X, stop - start, axis=0)
        weights = (-gibbs[:, start:stop] / B).reshape(-1)
        _, chunk_grads = picnn_value_and_grad_params(potential, rows, conds, weights)
        for name, g in chunk_grads.items():
            grads[name] = grads[name] + g

    potential_term = float(np.mean(pot_values))
    conjugate_term = float(np.mean(soft))
    return DualObjectiveEstimate(
        value=potential_term + conjugate_term, potential_term=potential_term, conjugate_term=conjugate_term
    ), grads


def soft_conjugate(potential: PicnnParams, y, x, samples: np.ndarray, epsilon: float) -> float:
    """eps * logsumexp_j((u_j'y - phi(u_j, x)) / eps) over the given draws"""
    samples = as_dense(samples)
    y = as_dense(y).reshape(-1)
    n = samples.shape[0]
    conds = None if x is None else np.broadcast_to(as_dense(x).reshape(-1), (n, potential.config.d_x))
    J = samples @ y - picnn_forward(potential, samples, conds)
    return float(epsilon * logsumexp(J / epsilon))


@dataclass
class EntropicRankResult:
    """Self-normalized importance-sampling estimate of the Gibbs mean"""
    u: np.ndarray
    effective_sample_size: float
    low_ess: bool


def entropic_rank(potential: PicnnParams, y, x=None, epsilon: float = 1e-3, m: int = 1024,
                  seed: int = 0, reference: ReferenceLaw = ReferenceLaw.GAUSSIAN) -> EntropicRankResult:
    """Entropic rank E[U | y, x] under pi(u) ~ exp((u'y - phi(u, x)) / eps) dF_U(u)"""
    if epsilon <= 0 or m < 2:
        raise ValueError("entropic_rank requires epsilon > 0 and m >= 2")
    rng = np.random.default_rng(seed)
    d = potential.config.d_u
    samples = sample_reference(reference, rng, m, d)
    y = as_dense(y).reshape(-1)
    conds = None if x is None else np.broadcast_to(as_dense(x).reshape(-1), (m, potential.config.d_x))
    J = samples @ y - picnn_forward(potential, samples, conds)
    logits = J / epsilon
    weights = np.exp(logits - np.max(logits))
    weights /= weights.sum()
    ess = float(1.0 / np.sum(weights * weights))
    low = ess < 2.0
    if low:
        logger.warning(f"entropic_rank: effective sample size {ess:.2f} < 2 at epsilon={epsilon}, m={m}")
    return EntropicRankResult(weights @ samples, ess, low)


def gradients_finite(grads: Arrays) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def evaluate_objective(potential: PicnnParams, batch: VariantBatch, u_check: np.ndarray) -> DualObjectiveEstimate:
    """Semi-dual estimate without gradients, for held-out monitoring"""
    pot = picnn_forward(potential, batch.potential_points, batch.X)
    conj = np.einsum("bd,bd->b", u_check, batch.conjugate_points) - picnn_forward(potential, u_check, batch.X)
    return DualObjectiveEstimate(
        value=float(np.mean(pot) + np.mean(conj)),
        potential_term=float(np.mean(pot)),
        conjugate_term=float(np.mean(conj)),
    )


def draw_entropic_samples(reference: ReferenceLaw, rng: np.random.Generator, B: int, m: int, d: int) -> np.ndarray:
    return sample_reference(reference, rng, B * m, d).reshape(B, m, d)
