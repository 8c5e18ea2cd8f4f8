"""Datasets module for neuralvqr"""

from .convex import GroundTruthMap, gen_convex_variant
from .synthetic import (
    GENERATORS,
    ConditionalGenerator,
    funnel_blocks,
    gen_banana,
    gen_funnel,
    gen_glasses,
    gen_star,
    get_generator,
)
from .table import SampleTable, make_splits
from .tabular import load_csv
from .transforms import ResidualTransform, ServingUnits

__all__ = [
    "GroundTruthMap",
    "gen_convex_variant",
    "GENERATORS",
    "ConditionalGenerator",
    "funnel_blocks",
    "gen_banana",
    "gen_funnel",
    "gen_glasses",
    "gen_star",
    "get_generator",
    "SampleTable",
    "make_splits",
    "load_csv",
    "ResidualTransform",
    "ServingUnits",
]
