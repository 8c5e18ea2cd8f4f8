"""
Core model, solver and training types
"""

import math
from enum import Enum
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Variant(str, Enum):
    """Which side the potential network is defined over"""
    U = "U"  # phi(u, x), quantile map is the gradient
    Y = "Y"  # psi(y, x), rank map is the gradient


class TrainMethod(str, Enum):
    """Semi-dual training loops"""
    C_NQR = "C-NQR"
    AC_NQR = "AC-NQR"
    EC_NQR = "EC-NQR"


class ReferenceLaw(str, Enum):
    """Reference distribution F_U of the ranks"""
    GAUSSIAN = "gaussian"
    UNIFORM_BALL = "uniform-ball"
    UNIFORM_BOX = "uniform-box"


class AmortizerLoss(str, Enum):
    """Regression targets for the amortized conjugate predictor"""
    U_DISTANCE = "u"        # E || u~ - u_check ||^2
    OBJECTIVE = "objective"  # E -J(u~; y, x)
    RESIDUAL = "residual"    # E || grad phi(u~, x) - y ||^2


class SolverInit(str, Enum):
    """Starting point of non-warm-started conjugate solves"""
    ZERO = "zero"
    REFERENCE = "reference"


class PicnnConfig(BaseModel):
    """Architecture of a partially input convex potential network"""
    model_config = ConfigDict(extra="forbid")

    d_u: int = Field(..., ge=1, description="Convex input dimension")
    d_x: int = Field(0, ge=0, description="Conditioning dimension")
    width: int = Field(18, ge=1, description="Hidden width of the z and context paths")
    depth: int = Field(8, ge=1, description="Number of z-updates K")
    strong_convexity: bool = Field(True, description="Add (e^w / 2)||u||^2 (PISCNN)")
    alpha_log_init: float = Field(math.log(0.1), description="Initial w with alpha = e^w")


class ActNormState(BaseModel):
    """Per-channel ActNorm state of one layer"""
    initialized: bool = False
    scale_log: List[float] = Field(default_factory=list)
    shift: List[float] = Field(default_factory=list)
    clamped_channels: int = Field(0, description="Channels whose scale hit the init clamp")


class Domain(BaseModel):
    """Feasible set of a conjugate solve"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["unbounded", "ball", "box"] = "unbounded"
    radius: float = Field(1.0, gt=0)
    lo: float = -1.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _check_box(self):
        if self.kind == "box" and not self.lo < self.hi:
            raise ValueError("box domain requires lo < hi")
        return self

    def project(self, points: np.ndarray) -> np.ndarray:
        """Euclidean projection of each row onto the domain"""
        if self.kind == "unbounded":
            return points
        if self.kind == "box":
            return np.clip(points, self.lo, self.hi)
        norms = np.linalg.norm(points, axis=-1, keepdims=True)
        factor = np.minimum(1.0, self.radius / np.maximum(norms, 1e-300))
        return points * factor

    def projected_gradient(self, points: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """u - P(u - g), equal to g on the unbounded domain"""
        if self.kind == "unbounded":
            return grads
        return points - self.project(points - grads)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        if self.kind == "unbounded":
            return np.ones(points.shape[0], dtype=bool)
        if self.kind == "box":
            return np.all((points >= self.lo - tol) & (points <= self.hi + tol), axis=-1)
        return np.linalg.norm(points, axis=-1) <= self.radius + tol


class SolverSettings(BaseModel):
    """L-BFGS settings for conjugate solves"""
    model_config = ConfigDict(extra="forbid")

    eps_norm: float = Field(1e-7, gt=0, description="Projected-gradient norm tolerance")
    eps_obj: float = Field(1e-7, gt=0, description="Objective-decrease tolerance")
    max_iter: int = Field(1000, ge=1, description="K_max")
    memory: int = Field(10, ge=1, description="L-BFGS history length")
    c1: float = Field(1e-4, gt=0, lt=1)
    c2: float = Field(0.9, gt=0, lt=1)
    max_line_search: int = Field(25, ge=1)
    init: SolverInit = SolverInit.ZERO
    workers: Optional[int] = Field(None, ge=1, description="Thread pool size for batch solves")

    @model_validator(mode="after")
    def _check_wolfe(self):
        if not self.c1 < self.c2:
            raise ValueError("strong-Wolfe constants require c1 < c2")
        return self


class TrainConfig(BaseModel):
    """Training loop configuration"""
    model_config = ConfigDict(extra="forbid")

    method: TrainMethod = TrainMethod.AC_NQR
    variant: Variant = Variant.U
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(20, ge=1)
    lr: float = Field(1e-2, ge=0)
    weight_decay: float = Field(1e-4, ge=0)
    clip_norm: float = Field(10.0, gt=0)
    epsilon: float = Field(1e-3, gt=0, description="Entropic regularization")
    m: int = Field(1024, ge=2, description="Monte Carlo reference samples per point (EC-NQR)")
    entropic_chunk: int = Field(128, ge=1)
    reference: ReferenceLaw = ReferenceLaw.GAUSSIAN
    seed: int = 0
    inner_max_iter: Optional[int] = Field(None, ge=1, description="K_max inside training; 50 warm-started, 100 otherwise")
    amortizer_lr: Optional[float] = Field(None, ge=0)
    amortizer_loss: AmortizerLoss = AmortizerLoss.U_DISTANCE
    restart_period_steps: int = Field(5000, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("lr")
    @classmethod
    def _lr_finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("lr must be finite")
        return v

    @model_validator(mode="after")
    def _entropic_is_u_variant(self):
        if self.method == TrainMethod.EC_NQR and self.variant != Variant.U:
            raise ValueError("EC-NQR trains the U-variant only")
        return self

    def resolved_inner_max_iter(self) -> int:
        if self.inner_max_iter is not None:
            return self.inner_max_iter
        return 50 if self.method == TrainMethod.AC_NQR else 100


class DualObjectiveEstimate(BaseModel):
    """Mini-batch estimate of the semi-dual objective"""
    value: float
    potential_term: float = Field(..., description="E phi(U, X) part")
    conjugate_term: float = Field(..., description="E phi*(Y, X) part")

    @model_validator(mode="after")
    def _value_is_sum(self):
        if np.isfinite(self.value) and abs(self.value - (self.potential_term + self.conjugate_term)) > 1e-9 * max(1.0, abs(self.value)):
            raise ValueError("objective value must equal the sum of its terms")
        return self


class EpochRecord(BaseModel):
    """One row of the training log"""
    epoch: int
    objective: float
    potential_term: float
    conjugate_term: float
    mean_inner_iterations: float
    non_converged: int = 0
    wall_ms: float
