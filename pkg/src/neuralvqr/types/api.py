"""
Model server request/response types
"""

from typing import List, Optional

from pydantic import BaseModel, Field

from .conformal import ConformalMethod


class RankRequest(BaseModel):
    """Points y to map to ranks; x is one row per point or a single shared row"""
    points: List[List[float]] = Field(..., min_length=1)
    x: Optional[List[List[float]]] = None
    predictions: Optional[List[List[float]]] = Field(
        None, description="External point prediction per row, for models fitted on residuals")


class RankResponse(BaseModel):
    ranks: List[List[float]]
    converged: List[bool]
    iterations: List[int]
    duration_ms: int


class QuantileRequest(BaseModel):
    ranks: List[List[float]] = Field(..., min_length=1)
    x: Optional[List[List[float]]] = None
    predictions: Optional[List[List[float]]] = Field(
        None, description="External point prediction per row, for models fitted on residuals")


class QuantileResponse(BaseModel):
    points: List[List[float]]
    converged: List[bool]
    duration_ms: int


class MembershipRequest(BaseModel):
    points: List[List[float]] = Field(..., min_length=1)
    x: Optional[List[List[float]]] = None
    predictions: Optional[List[List[float]]] = Field(
        None, description="External point prediction per row, for models fitted on residuals")
    method: ConformalMethod = ConformalMethod.PB
    alpha: float = Field(0.1, gt=0, lt=1)


class MembershipResponse(BaseModel):
    membership: List[int] = Field(..., description="1 inside, 0 outside, -1 unknown (solve failed)")
    method: ConformalMethod
    alpha: float
    radius: Optional[float] = None
    threshold: Optional[float] = None
    unbounded: bool = Field(False, description="The set is all of R^d_y")
    duration_ms: int


class ModelInfo(BaseModel):
    variant: str
    reference: str
    d_y: int
    d_x: int
    calibrations: List[str] = Field(default_factory=list, description="Available method@alpha pairs")
    original_units: bool = Field(False, description="Requests are standardized with the training table's statistics")
    residual: bool = Field(False, description="Requests must carry per-row point predictions")
