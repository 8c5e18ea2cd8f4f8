"""
Reverse-mode automatic differentiation over dense float64 arrays

A GradientTape records one evaluation: every primitive appends a Node holding
its value, its parent ids and a vector-Jacobian closure. Node ids are list
positions, so creation order is a topological order and the reverse sweep is
a single backwards pass over the list.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import expit

from ..types.errors import NonScalarRootError, ShapeMismatchError

logger = logging.getLogger(__name__)

DenseArray = np.ndarray

VjpFn = Callable[[np.ndarray], Tuple[np.ndarray, ...]]

OPS = (
    "matmul", "add", "mul", "softplus", "elu", "relu_clamp", "logsumexp",
    "sum", "scale", "dot", "square_norm", "exp",
)


def as_dense(value) -> DenseArray:
    """Coerce to a contiguous float64 array"""
    return np.ascontiguousarray(np.asarray(value, dtype=np.float64))


@dataclass
class Node:
    """One recorded value with the closure that maps its adjoint to its parents'"""
    value: DenseArray
    parents: Tuple[int, ...]
    op: str
    vjp: Optional[VjpFn] = None


@dataclass
class GradientTape:
    """Append-only record of a single evaluation"""
    nodes: list = field(default_factory=list)
    watched: Set[int] = field(default_factory=set)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def constant(self, value) -> int:
        """Leaf whose adjoint is never requested"""
        return self._append(Node(as_dense(value), (), "const"))

    def watch(self, value) -> int:
        """Leaf whose adjoint backward() reports"""
        node_id = self._append(Node(as_dense(value), (), "leaf"))
        self.watched.add(node_id)
        return node_id

    def value(self, node_id: int) -> DenseArray:
        return self.nodes[node_id].value


def _mismatch(op: str, *shapes) -> ShapeMismatchError:
    rendered = ", ".join(str(tuple(s)) for s in shapes)
    return ShapeMismatchError(f"{op}: incompatible shapes {rendered}")


def _unbroadcast_row(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a (m, n) adjoint onto an operand of shape (n,)"""
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


def _binary_shape_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    # matrix with row vector
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise _mismatch(op, a.shape, b.shape)


def _matmul(a: np.ndarray, b: np.ndarray):
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise _mismatch("matmul", a.shape, b.shape)
    out = a @ b

    def vjp(g):
        if b.ndim == 1:
            return np.outer(g, b), a.T @ g
        return g @ b.T, a.T @ g
    return out, vjp


def _add(a: np.ndarray, b: np.ndarray):
    _binary_shape_check("add", a, b)
    out = a + b
    return out, lambda g: (_unbroadcast_row(g, a.shape), _unbroadcast_row(g, b.shape))


def _mul(a: np.ndarray, b: np.ndarray):
    _binary_shape_check("mul", a, b)
    out = a * b
    return out, lambda g: (_unbroadcast_row(g * b, a.shape), _unbroadcast_row(g * a, b.shape))


def _softplus(a: np.ndarray):
    out = np.logaddexp(0.0, a)
    return out, lambda g: (g * expit(a),)


def _elu(a: np.ndarray):
    positive = a > 0
    out = np.where(positive, a, np.expm1(np.minimum(a, 0.0)))
    return out, lambda g: (g * np.where(positive, 1.0, np.exp(np.minimum(a, 0.0))),)


def _relu_clamp(a: np.ndarray):
    positive = a > 0
    return np.where(positive, a, 0.0), lambda g: (g * positive,)


def _exp(a: np.ndarray):
    out = np.exp(a)
    return out, lambda g: (g * out,)


def _logsumexp(a: np.ndarray, axis: Optional[int] = None):
    if a.size == 0:
        raise _mismatch("logsumexp", a.shape)
    shift = np.max(a, axis=axis, keepdims=True)
    shifted = np.exp(a - shift)
    total = shifted.sum(axis=axis, keepdims=True)
    out_keep = shift + np.log(total)
    weights = shifted / total
    out = out_keep.reshape(()) if axis is None else np.squeeze(out_keep, axis=axis)

    def vjp(g):
        g_keep = np.reshape(g, ()) if axis is None else np.expand_dims(g, axis)
        return (g_keep * weights,)
    return out, vjp


def _sum(a: np.ndarray, axis: Optional[int] = None):
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise _mismatch("sum", a.shape)
    out = np.asarray(a.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return out, vjp


def _scale(a: np.ndarray, factor: float):
    return a * factor, lambda g: (g * factor,)


def _dot(a: np.ndarray, b: np.ndarray):
    if a.ndim != 1 or a.shape != b.shape:
        raise _mismatch("dot", a.shape, b.shape)
    return np.asarray(a @ b), lambda g: (g * b, g * a)


def _square_norm(a: np.ndarray):
    return np.asarray(np.sum(a * a)), lambda g: (2.0 * g * a,)


_UNARY = {
    "softplus": _softplus,
    "elu": _elu,
    "relu_clamp": _relu_clamp,
    "exp": _exp,
    "square_norm": _square_norm,
}
_BINARY = {
    "matmul": _matmul,
    "add": _add,
    "mul": _mul,
    "dot": _dot,
}


def forward_op(tape: GradientTape, op: str, inputs: Sequence[int], **attrs) -> int:
    """Apply a primitive to recorded nodes and record the result.

    ``attrs`` carries the non-differentiable arguments: ``axis`` for sum and
    logsumexp, ``factor`` for scale.
    """
    values = [tape.nodes[i].value for i in inputs]
    if op in _UNARY:
        if len(values) != 1:
            raise ShapeMismatchError(f"{op}: expected 1 input, got {len(values)}")
        out, vjp = _UNARY[op](values[0])
    elif op in _BINARY:
        if len(values) != 2:
            raise ShapeMismatchError(f"{op}: expected 2 inputs, got {len(values)}")
        out, vjp = _BINARY[op](values[0], values[1])
    elif op == "logsumexp":
        out, vjp = _logsumexp(values[0], attrs.get("axis"))
    elif op == "sum":
        out, vjp = _sum(values[0], attrs.get("axis"))
    elif op == "scale":
        out, vjp = _scale(values[0], float(attrs["factor"]))
    else:
        raise ValueError(f"unknown op '{op}'")
    return tape._append(Node(as_dense(out), tuple(inputs), op, vjp))


def backward(tape: GradientTape, root: int) -> Dict[int, DenseArray]:
    """Adjoints of a scalar root with respect to every watched node.

    The tape is not modified, so repeated calls return identical adjoints.
    """
    root_value = tape.nodes[root].value
    if root_value.size != 1:
        raise NonScalarRootError(f"backward: root {root} has shape {root_value.shape}, expected a scalar")

    adjoints: Dict[int, np.ndarray] = {root: np.ones_like(root_value)}
    for node_id in range(root, -1, -1):
        grad = adjoints.get(node_id)
        node = tape.nodes[node_id]
        if grad is None or node.vjp is None:
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(grad)):
            if parent in adjoints:
                adjoints[parent] = adjoints[parent] + parent_grad
            else:
                adjoints[parent] = np.asarray(parent_grad, dtype=np.float64)

    return {
        node_id: adjoints.get(node_id, np.zeros_like(tape.nodes[node_id].value))
        for node_id in tape.watched
    }


GraphBuilder = Callable[[GradientTape, int], int]


def grad_check(f: GraphBuilder, point, step: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` receives a fresh tape and the id of the input node and returns the id
    of a scalar root. Relative errors use max(|analytic|, |numeric|, 1e-8) as
    denominator.
    """
    if step <= 0:
        raise ValueError("grad_check step must be positive")
    point = as_dense(point)

    tape = GradientTape()
    x_id = tape.watch(point)
    analytic = backward(tape, f(tape, x_id))[x_id]

    def evaluate(at: np.ndarray) -> float:
        t = GradientTape()
        return float(t.value(f(t, t.constant(at))))

    numeric = np.zeros_like(point)
    flat = numeric.reshape(-1)
    for i in range(point.size):
        shifted = point.copy().reshape(-1)
        shifted[i] += step
        upper = evaluate(shifted.reshape(point.shape))
        shifted[i] -= 2.0 * step
        lower = evaluate(shifted.reshape(point.shape))
        flat[i] = (upper - lower) / (2.0 * step)

    if point.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    error = float(np.max(np.abs(analytic - numeric) / denom))
    logger.debug(f"grad_check over {point.size} coordinates: max relative error {error:.3e}")
    return error
