"""
Synthetic conditional benchmarks: Banana, Star, Glasses and the block Funnel

Each generator draws X from its own law and Y | X row-wise, so the same code
serves whole tables and conditional samples at a fixed x. Everything is a
pure function of the generator parameters and the seed.
"""

import logging
import math
from typing import Dict, Tuple, Type

import numpy as np

from .table import SampleTable

logger = logging.getLogger(__name__)


class ConditionalGenerator:
    """Base class: subclasses set d_x, d_y and implement sample_x / sample_y"""
    name = "base"
    d_x = 1
    d_y = 2

    def params(self) -> dict:
        return {}

    def sample_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample_y(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_y_given_x(self, x, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws of Y | X = x"""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return self.sample_y(np.broadcast_to(x, (n, self.d_x)).copy(), rng)

    def generate(self, n: int, seed: int) -> SampleTable:
        if n < 1:
            raise ValueError(f"{self.name}: n must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        X = self.sample_x(rng, n)
        Y = self.sample_y(X, rng)
        logger.debug(f"generated {n} rows of {self.name} with seed {seed}")
        return SampleTable(X=X, Y=Y, generator=self.name, seed=seed, params=self.params())


class BananaGenerator(ConditionalGenerator):
    """Parabola whose curvature shrinks as X grows; beta is the scalar 1"""
    name = "banana"
    x_low, x_high = 0.8, 3.2

    def sample_x(self, rng, n):
        return rng.uniform(self.x_low, self.x_high, size=(n, 1))

    def sample_y(self, X, rng):
        n = X.shape[0]
        x = X[:, 0]
        z = rng.uniform(-math.pi, math.pi, size=n)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
        r = rng.uniform(-0.1, 0.1, size=n)
        beta = 1.0
        y0 = 0.5 * (1.0 - np.cos(z)) + r * np.sin(phi) + np.sin(x)
        y1 = z / (beta * x) + r * np.cos(phi)
        return np.column_stack([y0, y1])


def rotation(angle: np.ndarray) -> np.ndarray:
    """Stack of 2x2 rotation matrices, shape (n, 2, 2)"""
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def star_point(u: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Scale (u0, u1) by 1 + 3 cos(3 theta) and rotate by angle"""
    u = np.atleast_2d(u)
    theta = np.arctan2(u[:, 1], u[:, 0])
    scale = 1.0 + 3.0 * np.cos(3.0 * theta)
    v = u * scale[:, None]
    return np.einsum("nij,nj->ni", rotation(np.broadcast_to(angle, (u.shape[0],))), v)


class StarGenerator(ConditionalGenerator):
    """Three-pointed star rotated by 2*pi*X"""
    name = "star"

    def sample_x(self, rng, n):
        return rng.uniform(0.0, 2.0 / 3.0, size=(n, 1))

    def sample_y(self, X, rng):
        u = rng.standard_normal((X.shape[0], 2))
        return star_point(u, 2.0 * math.pi * X[:, 0])


def glasses_branches(x: np.ndarray, eps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    z1 = 3.0 * math.pi * x
    z2 = math.pi * (1.0 + 3.0 * x)
    return 5.0 * np.sin(z1) + 2.5 + eps, 5.0 * np.sin(z2) + 2.5 - eps


class GlassesGenerator(ConditionalGenerator):
    """Two sinusoidal modes mixed by a fair coin; X ~ U[0, 1]"""
    name = "glasses"

    def __init__(self, two_dim: bool = False):
        self.two_dim = two_dim
        self.d_y = 2 if two_dim else 1

    def params(self):
        return {"two_dim": self.two_dim}

    def sample_x(self, rng, n):
        return rng.uniform(0.0, 1.0, size=(n, 1))

    def sample_y(self, X, rng):
        n = X.shape[0]
        # Beta(0.5, 1) by inverse CDF: F(t) = sqrt(t)
        eps = rng.uniform(size=n) ** 2
        y1, y2 = glasses_branches(X[:, 0], eps)
        if self.two_dim:
            return np.column_stack([y1, y2])
        gamma = rng.integers(0, 2, size=n)
        return ((1 - gamma) * y1 + gamma * y2).reshape(-1, 1)


class FunnelGenerator(ConditionalGenerator):
    """k funnel necks v_j ~ N(0, sigma^2) as X, each scaling a block of m Gaussians in Y"""
    name = "funnel"

    def __init__(self, k: int = 1, m: int = 2, sigma: float = 3.0):
        if k < 1 or m < 1:
            raise ValueError(f"funnel needs k >= 1 and m >= 1, got k={k}, m={m}")
        if sigma < 0:
            raise ValueError("funnel sigma must be nonnegative")
        self.k, self.m, self.sigma = k, m, sigma
        self.d_x = k
        self.d_y = k * m

    def params(self):
        return {"k": self.k, "m": self.m, "sigma": self.sigma}

    def sample_x(self, rng, n):
        return self.sigma * rng.standard_normal((n, self.k))

    def sample_y(self, X, rng):
        scale = np.repeat(np.exp(0.5 * X), self.m, axis=1)
        return scale * rng.standard_normal((X.shape[0], self.d_y))


def funnel_blocks(dimension: int) -> Tuple[int, int]:
    """Output dimension D as (k, m): blocks of two, or one block for odd D"""
    if dimension < 1:
        raise ValueError("funnel dimension must be >= 1")
    if dimension % 2 == 0:
        return dimension // 2, 2
    return 1, dimension


GENERATORS: Dict[str, Type[ConditionalGenerator]] = {
    "banana": BananaGenerator,
    "star": StarGenerator,
    "glasses": GlassesGenerator,
    "funnel": FunnelGenerator,
}


def get_generator(name: str, **params) -> ConditionalGenerator:
    try:
        cls = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; expected one of {sorted(GENERATORS)}") from None
    return cls(**params)


def gen_banana(n: int, seed: int) -> SampleTable:
    return BananaGenerator().generate(n, seed)


def gen_star(n: int, seed: int) -> SampleTable:
    return StarGenerator().generate(n, seed)


def gen_glasses(n: int, seed: int, two_dim: bool = False) -> SampleTable:
    return GlassesGenerator(two_dim).generate(n, seed)


def gen_funnel(k: int, m: int, sigma: float, n: int, seed: int) -> SampleTable:
    return FunnelGenerator(k, m, sigma).generate(n, seed)
