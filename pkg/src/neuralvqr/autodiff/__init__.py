"""
Reverse-mode automatic differentiation
"""

from .tape import (
    OPS,
    DenseArray,
    GradientTape,
    Node,
    as_dense,
    backward,
    forward_op,
    grad_check,
)

__all__ = [
    "OPS",
    "DenseArray",
    "GradientTape",
    "Node",
    "as_dense",
    "backward",
    "forward_op",
    "grad_check",
]
