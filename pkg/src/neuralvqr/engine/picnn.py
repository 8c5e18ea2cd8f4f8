"""
Partially input convex potential networks (PICNN / PISCNN)

The potential phi(u, x) is convex in u for every x. Each of the K layers computes

    h_i = W_i^(z) (z_i * softplus(W_i^(zc) c_i + b_i^(z)))
          + W_i^(u) (u * (W_i^(uc) c_i + b_i^(u))) + W_i^(c) c_i + b_i
    z_{i+1} = softplus(exp(s_i) * h_i + t_i)

with c_0 = x, z_0 = 0, c_{i+1} = elu(W~_i c_i + b~_i) and effective z-weights
softplus(W~_i^(z)) >= 0. The last layer maps to a single channel. With strong
convexity on, (e^w / 2) ||u||^2 is added.

Weights are stored (fan_in, fan_out) so rows of a batch multiply on the left.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..autodiff import GradientTape, as_dense, backward, forward_op
from ..types.errors import ActNormError, ShapeMismatchError
from ..types.models import ActNormState, PicnnConfig

logger = logging.getLogger(__name__)

RECORD_FORMAT = "neuralvqr.picnn"
RECORD_VERSION = 1

Z_WEIGHT_INIT = 0.05
ACTNORM_SCALE_MIN = 1e-3
ACTNORM_SCALE_MAX = 1e3


def layer_key(layer: int, name: str) -> str:
    return f"layers.{layer}.{name}"


def parameter_shapes(config: PicnnConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered map of parameter name to shape"""
    shapes: Dict[str, Tuple[int, ...]] = {}
    width, depth = config.width, config.depth
    for i in range(depth):
        c_dim = config.d_x if i == 0 else width
        w_out = width if i < depth - 1 else 1
        if i < depth - 1:
            shapes[layer_key(i, "ctx_W")] = (c_dim, width)
            shapes[layer_key(i, "ctx_b")] = (width,)
        if i > 0:
            shapes[layer_key(i, "z_W_raw")] = (width, w_out)
            shapes[layer_key(i, "zc_W")] = (c_dim, width)
            shapes[layer_key(i, "zc_b")] = (width,)
        shapes[layer_key(i, "u_W")] = (config.d_u, w_out)
        shapes[layer_key(i, "uc_W")] = (c_dim, config.d_u)
        shapes[layer_key(i, "uc_b")] = (config.d_u,)
        shapes[layer_key(i, "c_W")] = (c_dim, w_out)
        shapes[layer_key(i, "b")] = (w_out,)
        shapes[layer_key(i, "an_s")] = (w_out,)
        shapes[layer_key(i, "an_t")] = (w_out,)
    if config.strong_convexity:
        shapes["alpha_w"] = (1,)
    return shapes


def softplus_inverse(value: float) -> float:
    return math.log(math.expm1(value))


class PicnnParams:
    """Named parameter arrays of one potential network plus its ActNorm status"""

    def __init__(self, config: PicnnConfig, arrays: Dict[str, np.ndarray],
                 actnorm_initialized: bool = False, actnorm_clamped: Optional[List[int]] = None):
        expected = parameter_shapes(config)
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ShapeMismatchError(f"picnn params: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(arrays[name].shape) != shape:
                raise ShapeMismatchError(f"picnn params: {name} has shape {arrays[name].shape}, expected {shape}")
        self.config = config
        self.arrays = {name: as_dense(arrays[name]) for name in expected}
        self.actnorm_initialized = actnorm_initialized
        self.actnorm_clamped = list(actnorm_clamped or [0] * config.depth)

    @classmethod
    def initialize(cls, config: PicnnConfig, rng: np.random.Generator) -> "PicnnParams":
        """Random parameters with uninitialized ActNorm"""
        arrays = {}
        for name, shape in parameter_shapes(config).items():
            kind = name.rsplit(".", 1)[-1]
            fan_in = max(shape[0], 1)
            bound = 1.0 / math.sqrt(fan_in)
            if kind in ("ctx_W", "zc_W", "uc_W", "u_W", "c_W"):
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            elif kind == "ctx_b":
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            elif kind in ("zc_b", "uc_b"):
                # gates start open
                arrays[name] = np.ones(shape)
            elif kind == "z_W_raw":
                arrays[name] = np.full(shape, softplus_inverse(Z_WEIGHT_INIT))
            elif kind == "alpha_w":
                arrays[name] = np.full(shape, config.alpha_log_init)
            else:
                arrays[name] = np.zeros(shape)
        return cls(config, arrays)

    @property
    def names(self) -> List[str]:
        return list(self.arrays)

    @property
    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    @property
    def alpha(self) -> float:
        if not self.config.strong_convexity:
            return 0.0
        return float(np.exp(self.arrays["alpha_w"][0]))

    def copy(self) -> "PicnnParams":
        return PicnnParams(self.config, {k: v.copy() for k, v in self.arrays.items()},
                           self.actnorm_initialized, self.actnorm_clamped)

    def replace(self, arrays: Dict[str, np.ndarray]) -> "PicnnParams":
        """Same config and ActNorm status with new arrays"""
        return PicnnParams(self.config, arrays, self.actnorm_initialized, self.actnorm_clamped)

    def effective_z_weights(self, layer: int) -> np.ndarray:
        return np.logaddexp(0.0, self.arrays[layer_key(layer, "z_W_raw")])

    def actnorm_states(self) -> List[ActNormState]:
        return [
            ActNormState(
                initialized=self.actnorm_initialized,
                scale_log=self.arrays[layer_key(i, "an_s")].tolist(),
                shift=self.arrays[layer_key(i, "an_t")].tolist(),
                clamped_channels=self.actnorm_clamped[i],
            )
            for i in range(self.config.depth)
        ]

    def to_record(self) -> dict:
        return {
            "format": RECORD_FORMAT,
            "version": RECORD_VERSION,
            "config": self.config.model_dump(),
            "actnorm_initialized": self.actnorm_initialized,
            "actnorm_clamped": self.actnorm_clamped,
            "arrays": {
                name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
                for name, a in self.arrays.items()
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "PicnnParams":
        if record.get("format") != RECORD_FORMAT or record.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported potential record {record.get('format')} v{record.get('version')}")
        config = PicnnConfig(**record["config"])
        arrays = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in record["arrays"].items()
        }
        return cls(config, arrays, record["actnorm_initialized"], record.get("actnorm_clamped"))


class _ParamNodes:
    """Lazily records parameters on a tape, watched or constant"""

    def __init__(self, tape: GradientTape, params: PicnnParams, watch: bool):
        self.tape = tape
        self.params = params
        self.watch = watch
        self.ids: Dict[str, int] = {}

    def __call__(self, name: str) -> int:
        if name not in self.ids:
            value = self.params.arrays[name]
            self.ids[name] = self.tape.watch(value) if self.watch else self.tape.constant(value)
        return self.ids[name]


def _as_batch(config: PicnnConfig, u, x) -> Tuple[np.ndarray, np.ndarray, bool]:
    u = as_dense(u)
    single = u.ndim == 1
    U = u.reshape(1, -1) if single else u
    if U.ndim != 2 or U.shape[1] != config.d_u:
        raise ShapeMismatchError(f"picnn: u has shape {u.shape}, expected (*, {config.d_u})")
    if x is None:
        X = np.zeros((U.shape[0], config.d_x))
    else:
        X = as_dense(x)
        if X.ndim == 1:
            X = np.broadcast_to(X.reshape(1, -1), (U.shape[0], X.shape[0]))
        if X.ndim != 2 or X.shape != (U.shape[0], config.d_x):
            raise ShapeMismatchError(f"picnn: x has shape {np.shape(x)}, expected ({U.shape[0]}, {config.d_x})")
    return U, np.ascontiguousarray(X), single


def _actnorm_from_batch(h: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    mean = h.mean(axis=0)
    std = h.std(axis=0)
    with np.errstate(divide="ignore"):
        raw_scale = np.where(std > 0, 1.0 / std, np.inf)
    scale = np.clip(raw_scale, ACTNORM_SCALE_MIN, ACTNORM_SCALE_MAX)
    clamped = int(np.sum(scale != raw_scale))
    return np.log(scale), -mean * scale, clamped


def _build(tape: GradientTape, nodes: _ParamNodes, u_id: int, X: np.ndarray,
           init: bool = False, trace: Optional[List[np.ndarray]] = None) -> int:
    """Record phi(U, X) on the tape; returns a (B, 1) node"""
    params = nodes.params
    config = params.config
    if not params.actnorm_initialized and not init:
        raise ActNormError("picnn: ActNorm layers are not initialized; run actnorm_init on a first batch")

    c = tape.constant(X)
    z = None
    for i in range(config.depth):
        def p(name: str) -> int:
            return nodes(layer_key(i, name))

        gate_u = forward_op(tape, "add", [forward_op(tape, "matmul", [c, p("uc_W")]), p("uc_b")])
        h = forward_op(tape, "matmul", [forward_op(tape, "mul", [u_id, gate_u]), p("u_W")])
        h = forward_op(tape, "add", [h, forward_op(tape, "matmul", [c, p("c_W")])])
        h = forward_op(tape, "add", [h, p("b")])
        if i > 0:
            gate_z = forward_op(tape, "softplus", [
                forward_op(tape, "add", [forward_op(tape, "matmul", [c, p("zc_W")]), p("zc_b")])
            ])
            w_z = forward_op(tape, "softplus", [p("z_W_raw")])
            h = forward_op(tape, "add", [h, forward_op(tape, "matmul", [forward_op(tape, "mul", [z, gate_z]), w_z])])

        if init:
            s, t, clamped = _actnorm_from_batch(tape.value(h))
            params.arrays[layer_key(i, "an_s")] = s
            params.arrays[layer_key(i, "an_t")] = t
            params.actnorm_clamped[i] = clamped

        h = forward_op(tape, "add", [
            forward_op(tape, "mul", [h, forward_op(tape, "exp", [p("an_s")])]),
            p("an_t"),
        ])
        if trace is not None:
            trace.append(tape.value(h))
        z = forward_op(tape, "softplus", [h])
        if i < config.depth - 1:
            c = forward_op(tape, "elu", [
                forward_op(tape, "add", [forward_op(tape, "matmul", [c, p("ctx_W")]), p("ctx_b")])
            ])

    out = z
    if config.strong_convexity:
        squares = forward_op(tape, "matmul", [
            forward_op(tape, "mul", [u_id, u_id]),
            tape.constant(np.ones((config.d_u, 1))),
        ])
        alpha = forward_op(tape, "exp", [nodes("alpha_w")])
        quad = forward_op(tape, "scale", [forward_op(tape, "mul", [squares, alpha])], factor=0.5)
        out = forward_op(tape, "add", [out, quad])
    return out


def picnn_forward(params: PicnnParams, u, x=None):
    """phi(u, x); a float for a single point, a (B,) array for a batch"""
    U, X, single = _as_batch(params.config, u, x)
    tape = GradientTape()
    out = tape.value(_build(tape, _ParamNodes(tape, params, watch=False), tape.constant(U), X))[:, 0]
    return float(out[0]) if single else out


def potential_value_and_grad_u(params: PicnnParams, U: np.ndarray, X: Optional[np.ndarray] = None
                               ) -> Tuple[np.ndarray, np.ndarray]:
    """Batched phi(U, X) and grad_u phi(U, X)"""
    U, X, _ = _as_batch(params.config, U, X)
    tape = GradientTape()
    u_id = tape.watch(U)
    out = _build(tape, _ParamNodes(tape, params, watch=False), u_id, X)
    root = forward_op(tape, "sum", [out])
    grads = backward(tape, root)[u_id]
    return tape.value(out)[:, 0].copy(), grads


def picnn_grad_u(params: PicnnParams, u, x=None) -> np.ndarray:
    """Exact gradient of phi in u; the quantile map of the U-variant"""
    U, X, single = _as_batch(params.config, u, x)
    _, grads = potential_value_and_grad_u(params, U, X)
    return grads[0] if single else grads


def picnn_value_and_grad_params(params: PicnnParams, U: np.ndarray, X: Optional[np.ndarray],
                                weights: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Potential values and the parameter gradient of sum_b weights[b] * phi(U_b, X_b)"""
    U, X, _ = _as_batch(params.config, U, X)
    weights = as_dense(weights).reshape(-1)
    if U.shape[0] == 0:
        raise ShapeMismatchError("picnn_grad_params: empty batch")
    if weights.shape[0] != U.shape[0]:
        raise ShapeMismatchError(f"picnn_grad_params: {weights.shape[0]} weights for {U.shape[0]} points")
    tape = GradientTape()
    nodes = _ParamNodes(tape, params, watch=True)
    for name in params.names:
        nodes(name)
    out = _build(tape, nodes, tape.constant(U), X)
    root = forward_op(tape, "sum", [forward_op(tape, "matmul", [tape.constant(weights.reshape(1, -1)), out])])
    adjoints = backward(tape, root)
    grads = {name: adjoints[node_id] for name, node_id in nodes.ids.items()}
    return tape.value(out)[:, 0].copy(), grads


def picnn_grad_params(params: PicnnParams, U: np.ndarray, X: Optional[np.ndarray],
                      weights: np.ndarray) -> Dict[str, np.ndarray]:
    return picnn_value_and_grad_params(params, U, X, weights)[1]


def actnorm_init(params: PicnnParams, U: np.ndarray, X: Optional[np.ndarray] = None) -> PicnnParams:
    """Data-dependent ActNorm initialization on a first batch.

    Sets each layer's scale and shift so that the batch's post-ActNorm
    pre-activations have per-channel mean 0 and variance 1. Scales are clamped
    into [1e-3, 1e3]; constant channels land on the clamp.
    """
    if params.actnorm_initialized:
        raise ActNormError("actnorm_init: ActNorm is already initialized", code="actnorm_already_initialized")
    U, X, _ = _as_batch(params.config, U, X)
    if U.shape[0] < 2:
        raise ActNormError(f"actnorm_init: batch of size {U.shape[0]} has no variance", code="actnorm_batch_too_small")

    updated = params.copy()
    tape = GradientTape()
    _build(tape, _ParamNodes(tape, updated, watch=False), tape.constant(U), X, init=True)
    updated.actnorm_initialized = True
    clamped = sum(updated.actnorm_clamped)
    if clamped:
        logger.warning(f"actnorm_init: {clamped} channel(s) clamped to scale bounds [{ACTNORM_SCALE_MIN}, {ACTNORM_SCALE_MAX}]")
    logger.debug(f"actnorm_init: initialized {params.config.depth} layers on a batch of {U.shape[0]}")
    return updated


def actnorm_outputs(params: PicnnParams, U: np.ndarray, X: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Post-ActNorm pre-activations of every layer for a batch"""
    U, X, _ = _as_batch(params.config, U, X)
    tape = GradientTape()
    trace: List[np.ndarray] = []
    _build(tape, _ParamNodes(tape, params, watch=False), tape.constant(U), X, trace=trace)
    return trace


def make_quadratic_params(config: PicnnConfig, alpha: float = 1.0) -> PicnnParams:
    """PISCNN whose network part is numerically zero: phi(u, x) = (alpha / 2) ||u||^2.

    All weights are zero and the last ActNorm shift is pushed far negative so
    the final softplus underflows to exactly 0.
    """
    if not config.strong_convexity:
        raise ValueError("make_quadratic_params requires strong_convexity")
    arrays = {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()}
    arrays["alpha_w"] = np.full((1,), math.log(alpha))
    arrays[layer_key(config.depth - 1, "an_t")] = np.full((1,), -800.0)
    return PicnnParams(config, arrays, actnorm_initialized=True)
