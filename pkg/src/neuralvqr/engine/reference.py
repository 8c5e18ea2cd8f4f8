"""
Reference laws F_U for ranks: sampling, densities and matching solver domains
"""

import math

import numpy as np
from scipy.special import gammaln

from ..types.models import Domain, ReferenceLaw


def sample_uniform_ball(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
    """Uniform draws in the d-ball: a uniform direction times radius * v^(1/d)"""
    directions = rng.standard_normal((n, d))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = directions / np.maximum(norms, 1e-300)
    radii = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return directions * radii


def sample_reference(law: ReferenceLaw, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if law == ReferenceLaw.GAUSSIAN:
        return rng.standard_normal((n, d))
    if law == ReferenceLaw.UNIFORM_BALL:
        return sample_uniform_ball(rng, n, d)
    return rng.uniform(-1.0, 1.0, size=(n, d))


def reference_log_density(law: ReferenceLaw, U: np.ndarray) -> np.ndarray:
    """log f_U at each row of U"""
    U = np.atleast_2d(U)
    d = U.shape[1]
    if law == ReferenceLaw.GAUSSIAN:
        return -0.5 * np.sum(U * U, axis=1) - 0.5 * d * math.log(2.0 * math.pi)
    if law == ReferenceLaw.UNIFORM_BALL:
        log_volume = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)
        inside = np.linalg.norm(U, axis=1) <= 1.0
        return np.where(inside, -log_volume, -np.inf)
    inside = np.all(np.abs(U) <= 1.0, axis=1)
    return np.where(inside, -d * math.log(2.0), -np.inf)


def reference_domain(law: ReferenceLaw) -> Domain:
    """Support of F_U as a solver domain"""
    if law == ReferenceLaw.GAUSSIAN:
        return Domain(kind="unbounded")
    if law == ReferenceLaw.UNIFORM_BALL:
        return Domain(kind="ball", radius=1.0)
    return Domain(kind="box", lo=-1.0, hi=1.0)
