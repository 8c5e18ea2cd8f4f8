"""
Amortized conjugate predictor u~(y, x) = MLP([y; x]) + W_y y + b_y

The MLP copies the width and depth of the potential network and uses ELU
activations. At initialization the last MLP layer is zero and W_y = I, so the
predictor starts as the identity on y.
"""

import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np

from ..autodiff import GradientTape, as_dense, backward, forward_op
from ..types.errors import ShapeMismatchError
from ..types.models import AmortizerLoss, PicnnConfig
from .picnn import PicnnParams, potential_value_and_grad_u

logger = logging.getLogger(__name__)

RECORD_FORMAT = "neuralvqr.amortizer"
RECORD_VERSION = 1

HVP_STEP = 1e-5


def amortizer_shapes(config: PicnnConfig) -> Dict[str, Tuple[int, ...]]:
    width, d = config.width, config.d_u
    shapes = {
        "in_W_y": (d, width),
        "in_W_x": (config.d_x, width),
        "in_b": (width,),
    }
    for k in range(config.depth - 1):
        shapes[f"hidden.{k}.W"] = (width, width)
        shapes[f"hidden.{k}.b"] = (width,)
    shapes.update({
        "out_W": (width, d),
        "out_b": (d,),
        "skip_W": (d, d),
        "skip_b": (d,),
    })
    return shapes


class AmortizerParams:
    """Named arrays of the amortization network"""

    def __init__(self, config: PicnnConfig, arrays: Dict[str, np.ndarray]):
        expected = amortizer_shapes(config)
        for name, shape in expected.items():
            if name not in arrays or tuple(arrays[name].shape) != shape:
                got = None if name not in arrays else arrays[name].shape
                raise ShapeMismatchError(f"amortizer params: {name} has shape {got}, expected {shape}")
        self.config = config
        self.arrays = {name: as_dense(arrays[name]) for name in expected}

    @classmethod
    def initialize(cls, config: PicnnConfig, rng: np.random.Generator) -> "AmortizerParams":
        arrays = {}
        for name, shape in amortizer_shapes(config).items():
            bound = 1.0 / math.sqrt(max(shape[0], 1))
            if name in ("out_W", "out_b", "skip_b"):
                arrays[name] = np.zeros(shape)
            elif name == "skip_W":
                arrays[name] = np.eye(shape[0])
            else:
                arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, arrays)

    @property
    def names(self):
        return list(self.arrays)

    def copy(self) -> "AmortizerParams":
        return AmortizerParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def replace(self, arrays: Dict[str, np.ndarray]) -> "AmortizerParams":
        return AmortizerParams(self.config, arrays)

    def to_record(self) -> dict:
        return {
            "format": RECORD_FORMAT,
            "version": RECORD_VERSION,
            "config": self.config.model_dump(),
            "arrays": {
                name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
                for name, a in self.arrays.items()
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "AmortizerParams":
        if record.get("format") != RECORD_FORMAT or record.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported amortizer record {record.get('format')} v{record.get('version')}")
        arrays = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in record["arrays"].items()
        }
        return cls(PicnnConfig(**record["config"]), arrays)


def _inputs(config: PicnnConfig, Y, X) -> Tuple[np.ndarray, np.ndarray]:
    Y = as_dense(Y)
    if Y.ndim == 1:
        Y = Y.reshape(1, -1)
    if Y.shape[1] != config.d_u:
        raise ShapeMismatchError(f"amortizer: y has shape {Y.shape}, expected (*, {config.d_u})")
    if X is None:
        X = np.zeros((Y.shape[0], config.d_x))
    X = as_dense(X).reshape(Y.shape[0], config.d_x)
    return Y, X


def _build(tape: GradientTape, ids: Dict[str, int], Y: np.ndarray, X: np.ndarray, depth: int) -> int:
    y = tape.constant(Y)
    h = forward_op(tape, "add", [
        forward_op(tape, "matmul", [y, ids["in_W_y"]]),
        forward_op(tape, "matmul", [tape.constant(X), ids["in_W_x"]]),
    ])
    h = forward_op(tape, "elu", [forward_op(tape, "add", [h, ids["in_b"]])])
    for k in range(depth - 1):
        h = forward_op(tape, "matmul", [h, ids[f"hidden.{k}.W"]])
        h = forward_op(tape, "elu", [forward_op(tape, "add", [h, ids[f"hidden.{k}.b"]])])
    out = forward_op(tape, "add", [forward_op(tape, "matmul", [h, ids["out_W"]]), ids["out_b"]])
    skip = forward_op(tape, "add", [forward_op(tape, "matmul", [y, ids["skip_W"]]), ids["skip_b"]])
    return forward_op(tape, "add", [out, skip])


def amortizer_predict(params: AmortizerParams, y, x=None) -> np.ndarray:
    """Warm start u~(y, x); one row per input row"""
    single = as_dense(y).ndim == 1
    Y, X = _inputs(params.config, y, x)
    tape = GradientTape()
    ids = {name: tape.constant(a) for name, a in params.arrays.items()}
    out = tape.value(_build(tape, ids, Y, X, params.config.depth))
    return out[0].copy() if single else out.copy()


def _grads_for_direction(params: AmortizerParams, Y: np.ndarray, X: np.ndarray,
                         direction: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Predictions and the parameter gradient of sum(direction * u~)"""
    tape = GradientTape()
    ids = {name: tape.watch(a) for name, a in params.arrays.items()}
    out = _build(tape, ids, Y, X, params.config.depth)
    root = forward_op(tape, "sum", [forward_op(tape, "mul", [out, tape.constant(direction)])])
    adjoints = backward(tape, root)
    return tape.value(out).copy(), {name: adjoints[i] for name, i in ids.items()}


def amortizer_loss_and_grad(params: AmortizerParams, Y, X, targets: Optional[np.ndarray] = None,
                            loss: AmortizerLoss = AmortizerLoss.U_DISTANCE,
                            potential: Optional[PicnnParams] = None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Batch loss and exact parameter gradient.

    U_DISTANCE: mean ||u~ - u_check||^2 against exact conjugate solutions.
    OBJECTIVE:  mean phi(u~, x) - u~'y, i.e. -J at the prediction.
    RESIDUAL:   mean ||grad phi(u~, x) - y||^2, with Hessian-vector products
                taken by central differences of grad phi.
    """
    Y, X = _inputs(params.config, Y, X)
    B = Y.shape[0]
    if B == 0:
        raise ShapeMismatchError("amortizer loss: empty batch")

    if loss == AmortizerLoss.U_DISTANCE:
        if targets is None:
            raise ValueError("amortizer loss 'u' requires conjugate targets")
        targets = as_dense(targets).reshape(B, -1)
        tape = GradientTape()
        ids = {name: tape.watch(a) for name, a in params.arrays.items()}
        out = _build(tape, ids, Y, X, params.config.depth)
        diff = forward_op(tape, "add", [out, tape.constant(-targets)])
        root = forward_op(tape, "scale", [forward_op(tape, "square_norm", [diff])], factor=1.0 / B)
        adjoints = backward(tape, root)
        return float(tape.value(root)), {name: adjoints[i] for name, i in ids.items()}

    if potential is None:
        raise ValueError(f"amortizer loss '{loss.value}' requires the potential")
    pred = amortizer_predict(params, Y, X)
    values, grad_phi = potential_value_and_grad_u(potential, pred, X)
    residual = grad_phi - Y

    if loss == AmortizerLoss.OBJECTIVE:
        value = float(np.mean(values - np.einsum("bd,bd->b", pred, Y)))
        _, grads = _grads_for_direction(params, Y, X, residual / B)
        return value, grads

    # d/du ||grad phi(u) - y||^2 = 2 H(u) r
    norms = np.linalg.norm(residual, axis=1, keepdims=True)
    unit = residual / np.maximum(norms, 1e-300)
    _, g_plus = potential_value_and_grad_u(potential, pred + HVP_STEP * unit, X)
    _, g_minus = potential_value_and_grad_u(potential, pred - HVP_STEP * unit, X)
    hvp = norms * (g_plus - g_minus) / (2.0 * HVP_STEP)
    value = float(np.mean(np.sum(residual * residual, axis=1)))
    _, grads = _grads_for_direction(params, Y, X, 2.0 * hvp / B)
    return value, grads
