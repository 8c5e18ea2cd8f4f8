"""
Convex-potential variants of the synthetic benchmarks

A strongly convex potential phi_bar is fitted to the standardized base
dataset and frozen. New pairs are drawn as x from the base X-law, u ~ F_U,
y = grad_u phi_bar(u, x), so Q and Q^-1 are known exactly. Convex tables
live in the standardized coordinates of the base dataset.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..engine.model import QuantileModel
from ..engine.picnn import PicnnParams
from ..engine.reference import sample_reference
from ..types.datasets import StandardizationState
from ..types.errors import MissingReferencePotentialError
from ..types.models import PicnnConfig, ReferenceLaw, SolverSettings, TrainConfig, TrainMethod, Variant
from .synthetic import ConditionalGenerator, get_generator
from .table import SampleTable

logger = logging.getLogger(__name__)

CONVEX_BASES = ("banana", "star", "glasses")
REFERENCE_FIT_ROWS = 4096


class GroundTruthMap(QuantileModel):
    """Frozen strongly convex potential with its exact rank and quantile maps"""

    def __init__(self, potential: PicnnParams, base: str,
                 base_standardization: Optional[StandardizationState] = None,
                 settings: Optional[SolverSettings] = None):
        if not potential.config.strong_convexity or not potential.alpha > 0:
            raise ValueError("ground-truth potential must be strongly convex (alpha > 0)")
        super().__init__(potential, Variant.U, ReferenceLaw.GAUSSIAN,
                         settings=settings or SolverSettings(eps_norm=1e-10, eps_obj=1e-15))
        self.base = base
        self.base_standardization = base_standardization

    def sample_y_given_x(self, x, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample(x, n, rng)


def fit_reference_potential(base: str, seed: int = 0, train_config: Optional[TrainConfig] = None,
                            picnn_config: Optional[PicnnConfig] = None) -> Tuple[PicnnParams, StandardizationState]:
    """Desk-scale AC-NQR fit of a strongly convex potential on the standardized base dataset"""
    from ..training.loops import train

    table = get_generator(base).generate(REFERENCE_FIT_ROWS, seed).standardized()
    config = train_config or TrainConfig(method=TrainMethod.AC_NQR, epochs=5, seed=seed)
    picnn_config = picnn_config or PicnnConfig(d_u=table.d_y, d_x=table.d_x, strong_convexity=True)
    logger.info(f"fitting reference potential for convex {base} ({config.epochs} epochs)")
    result = train(table, config, picnn_config)
    return result.potential, table.standardization


def gen_convex_variant(base: str, n: int, seed: int, potential: Optional[PicnnParams] = None,
                       base_standardization: Optional[StandardizationState] = None,
                       train_if_missing: bool = False,
                       train_config: Optional[TrainConfig] = None) -> Tuple[SampleTable, GroundTruthMap]:
    """Convex Banana / Star / Glasses with their ground-truth map"""
    if base not in CONVEX_BASES:
        raise ValueError(f"convex variants exist for {CONVEX_BASES}, got {base!r}")
    if n < 1:
        raise ValueError(f"convex-{base}: n must be >= 1, got {n}")
    generator: ConditionalGenerator = get_generator(base)
    if potential is None:
        if not train_if_missing:
            raise MissingReferencePotentialError(
                f"no reference potential for convex {base}: pass a trained strongly convex potential "
                f"(e.g. the potential.json of a `neuralvqr train` run on {base}) or set train_if_missing"
            )
        potential, base_standardization = fit_reference_potential(base, seed, train_config)

    truth = GroundTruthMap(potential, base, base_standardization)
    rng = np.random.default_rng(seed)
    X = generator.sample_x(rng, n)
    if base_standardization is not None:
        X = base_standardization.transform_x(X)
    U = sample_reference(ReferenceLaw.GAUSSIAN, rng, n, truth.d_y)
    Y = truth.quantile(U, X).values
    table = SampleTable(X=X, Y=Y, generator=f"convex-{base}", seed=seed, params={"base": base})
    return table, truth
