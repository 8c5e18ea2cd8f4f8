"""
Sample table metadata: standardization state, splits and the CSV sidecar
"""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class StandardizationState(BaseModel):
    """Per-column mean/std of the training split, for X and Y"""
    x_mean: List[float] = Field(default_factory=list)
    x_std: List[float] = Field(default_factory=list)
    y_mean: List[float]
    y_std: List[float]

    @model_validator(mode="after")
    def _positive_scales(self):
        if any(s <= 0 for s in self.x_std + self.y_std):
            raise ValueError("standardization scales must be positive")
        if len(self.x_mean) != len(self.x_std) or len(self.y_mean) != len(self.y_std):
            raise ValueError("standardization means and scales differ in length")
        return self

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "StandardizationState":
        return cls(
            x_mean=X.mean(axis=0).tolist(), x_std=X.std(axis=0).tolist(),
            y_mean=Y.mean(axis=0).tolist(), y_std=Y.std(axis=0).tolist(),
        )

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (X - np.asarray(self.x_mean)) / np.asarray(self.x_std)

    def transform_y(self, Y: np.ndarray) -> np.ndarray:
        return (Y - np.asarray(self.y_mean)) / np.asarray(self.y_std)

    def inverse_x(self, X: np.ndarray) -> np.ndarray:
        return X * np.asarray(self.x_std) + np.asarray(self.x_mean)

    def inverse_y(self, Y: np.ndarray) -> np.ndarray:
        return Y * np.asarray(self.y_std) + np.asarray(self.y_mean)


class SplitIndices(BaseModel):
    """Disjoint train / calibration / test row indices"""
    train: List[int]
    cal: List[int] = Field(default_factory=list)
    test: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _disjoint(self):
        total = len(self.train) + len(self.cal) + len(self.test)
        if len(set(self.train) | set(self.cal) | set(self.test)) != total:
            raise ValueError("splits overlap")
        return self


class TableSidecar(BaseModel):
    """JSON written next to a serialized sample table"""
    generator: str
    seed: int
    x_columns: List[str]
    y_columns: List[str]
    standardization: Optional[StandardizationState] = None
    splits: Optional[SplitIndices] = None
    params: dict = Field(default_factory=dict, description="Generator parameters")
