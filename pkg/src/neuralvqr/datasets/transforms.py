"""
Residual transform: fit on Y minus an external point prediction, and the
mapping between client units and model units used when serving
"""

from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..types.datasets import StandardizationState, TableSidecar
from ..types.errors import ShapeMismatchError
from .table import SampleTable
from .tabular import data_line_numbers, numeric_block


RESIDUAL_SUFFIX = "+residual"


class ResidualTransform:
    """Per-row predictions subtracted from Y before fitting and added back afterwards.

    Row i of ``predictions`` belongs to row i of the table it is applied to;
    ``rows`` selects a subset when the table is a split.
    """

    def __init__(self, predictions: np.ndarray):
        predictions = np.asarray(predictions, dtype=np.float64)
        self.predictions = predictions.reshape(predictions.shape[0], -1)

    @classmethod
    def from_csv(cls, path: Union[str, Path], columns: Sequence[str]) -> "ResidualTransform":
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
        return cls(numeric_block(frame, columns, data_line_numbers(path)))

    def _select(self, n: int, rows: Optional[np.ndarray]) -> np.ndarray:
        pred = self.predictions if rows is None else self.predictions[np.asarray(rows, dtype=int)]
        if pred.shape[0] != n:
            raise ValueError(f"residual transform has {pred.shape[0]} predictions for {n} rows")
        return pred

    def residualize(self, Y: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        return Y - self._select(Y.shape[0], rows)

    def restore(self, R: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        return R + self._select(R.shape[0], rows)

    def apply(self, table: SampleTable) -> SampleTable:
        return replace(table, Y=self.residualize(table.Y), generator=f"{table.generator}{RESIDUAL_SUFFIX}")


class ServingUnits:
    """Maps client data in original units to the units a model was fitted in, and back.

    ``standardization`` is the training table's state, if any. A residualized model
    needs the external point prediction of every queried row; Y is residualized
    before standardizing and restored after inverting, as in training.
    """

    def __init__(self, standardization: Optional[StandardizationState] = None, residual: bool = False):
        self.standardization = standardization
        self.residual = residual

    @classmethod
    def from_sidecar(cls, sidecar: TableSidecar) -> "ServingUnits":
        return cls(sidecar.standardization, sidecar.generator.endswith(RESIDUAL_SUFFIX))

    @property
    def identity(self) -> bool:
        return self.standardization is None and not self.residual

    def _offsets(self, predictions: Optional[np.ndarray], n: int, d: int) -> Optional[ResidualTransform]:
        if not self.residual:
            if predictions is not None:
                raise ShapeMismatchError("model was not fitted on residuals; predictions are not accepted",
                                         code="unexpected_predictions")
            return None
        if predictions is None:
            raise ShapeMismatchError("model was fitted on residuals; pass the point prediction of every row",
                                     code="predictions_required")
        predictions = np.asarray(predictions, dtype=np.float64)
        if predictions.ndim != 2 or predictions.shape != (n, d):
            raise ShapeMismatchError(f"predictions must have shape {(n, d)}, got {predictions.shape}")
        return ResidualTransform(predictions)

    def to_model_y(self, Y: np.ndarray, predictions: Optional[np.ndarray] = None) -> np.ndarray:
        offsets = self._offsets(predictions, *Y.shape)
        if offsets is not None:
            Y = offsets.residualize(Y)
        return Y if self.standardization is None else self.standardization.transform_y(Y)

    def from_model_y(self, Y: np.ndarray, predictions: Optional[np.ndarray] = None) -> np.ndarray:
        offsets = self._offsets(predictions, *Y.shape)
        if self.standardization is not None:
            Y = self.standardization.inverse_y(Y)
        return Y if offsets is None else offsets.restore(Y)

    def to_model_x(self, X: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if X is None or self.standardization is None or not self.standardization.x_mean:
            return X
        return self.standardization.transform_x(X)
