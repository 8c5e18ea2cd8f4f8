"""
Conformal calibration types
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .models import ReferenceLaw


class ConformalMethod(str, Enum):
    """Prediction-set constructions"""
    PB = "PB"              # pull-back of a rank ball
    RPB = "RPB"            # pull-back after discrete OT re-ranking
    HPD = "HPD"            # density level set via change of variables
    QUANTILE = "Quantile"  # chi-square radius, no calibration


class Membership(int, Enum):
    """Tri-state membership: unknown when an inner solve failed"""
    OUT = 0
    IN = 1
    UNKNOWN = -1


class RerankRecord(BaseModel):
    """Serialized re-ranking pairing"""
    source: List[List[float]]
    reference: List[List[float]]
    sigma: List[int]

    @model_validator(mode="after")
    def _bijection(self):
        n = len(self.source)
        if len(self.reference) != n or sorted(self.sigma) != list(range(n)):
            raise ValueError("re-ranking pairing must be a bijection between equal-size point sets")
        return self


class CalibrationArtifact(BaseModel):
    """Calibrated threshold of one (method, alpha) pair"""
    method: ConformalMethod
    alpha: float = Field(..., gt=0, lt=1)
    n: int = Field(..., ge=0, description="Calibration points used for the threshold")
    d_y: int = Field(..., ge=1)
    reference: ReferenceLaw = ReferenceLaw.GAUSSIAN
    radius: Optional[float] = Field(None, description="rho_{1-alpha} for PB, RPB and Quantile")
    threshold: Optional[float] = Field(None, description="Density threshold tau for HPD")
    order_index: Optional[int] = Field(None, description="1-based order statistic the threshold was read from")
    scores: List[float] = Field(default_factory=list, description="Sorted conformity scores")
    scores_truncated: bool = False
    failed_points: int = Field(0, ge=0, description="Calibration points whose solve failed")
    trivial: bool = Field(False, description="Too few points: the set is all of R^d_y")
    n_fit: Optional[int] = Field(None, description="RPB: points used to fit the re-ranking")
    rerank: Optional[RerankRecord] = None

    @field_validator("scores")
    @classmethod
    def _no_nan(cls, v: List[float]) -> List[float]:
        if any(math.isnan(s) for s in v):
            raise ValueError("conformity scores must not be NaN")
        return v

    @model_validator(mode="after")
    def _threshold_present(self):
        if self.method == ConformalMethod.HPD:
            if self.threshold is None:
                raise ValueError("HPD artifacts need a density threshold")
        elif self.radius is None:
            raise ValueError(f"{self.method.value} artifacts need a radius")
        if self.method == ConformalMethod.RPB and self.rerank is None:
            raise ValueError("RPB artifacts need the re-ranking pairing")
        return self


class EvaluationRow(BaseModel):
    """One row of the conformal evaluation CSV"""
    dataset: str
    method: ConformalMethod
    alpha: float
    seed: int
    coverage: float
    wsc: float = Field(..., description="Worst-slab coverage")
    log_volume_per_dim: float
    n_test: int
    unknown: int = Field(0, description="Test points whose membership could not be decided")
