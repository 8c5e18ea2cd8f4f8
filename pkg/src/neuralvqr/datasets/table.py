"""
SampleTable: paired (X, Y) draws with provenance, splits and standardization
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from ..types.datasets import SplitIndices, StandardizationState
from ..types.errors import DegenerateInputError, ShapeMismatchError


def make_splits(n: int, ratios: Sequence[float], seed: int) -> SplitIndices:
    """Shuffle 0..n-1 with the seed and cut it by rounded ratios; the last split takes the remainder"""
    if not 1 <= len(ratios) <= 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be 1-3 nonnegative numbers summing to 1, got {list(ratios)}")
    order = np.random.default_rng(seed).permutation(n)
    sizes = [int(round(r * n)) for r in ratios[:-1]]
    bounds = np.cumsum([0] + sizes + [n - sum(sizes)])
    parts = [order[bounds[i]:bounds[i + 1]].tolist() for i in range(len(ratios))]
    parts += [[]] * (3 - len(parts))
    return SplitIndices(train=parts[0], cal=parts[1], test=parts[2])


@dataclass
class SampleTable:
    """n rows of conditioning inputs X (n, d_x) and responses Y (n, d_y)"""
    X: np.ndarray
    Y: np.ndarray
    generator: str
    seed: int
    standardization: Optional[StandardizationState] = None
    splits: Optional[SplitIndices] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(self.Y.shape[0], -1)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeMismatchError(f"sample table: X has {self.X.shape[0]} rows, Y has {self.Y.shape[0]}")

    def __len__(self) -> int:
        return self.Y.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def rows(self, index) -> "SampleTable":
        return replace(self, X=self.X[index], Y=self.Y[index], splits=None)

    def split(self, name: str) -> "SampleTable":
        if self.splits is None:
            raise ValueError("sample table has no splits")
        return self.rows(np.asarray(getattr(self.splits, name), dtype=int))

    def with_splits(self, ratios: Sequence[float], seed: Optional[int] = None) -> "SampleTable":
        return replace(self, splits=make_splits(len(self), ratios, self.seed if seed is None else seed))

    def standardized(self) -> "SampleTable":
        """Standardize every column with train-split statistics (the whole table when unsplit)"""
        if self.standardization is not None:
            return self
        train = np.asarray(self.splits.train, dtype=int) if self.splits else np.arange(len(self))
        reject_constant_columns(self.X[train], "x")
        reject_constant_columns(self.Y[train], "y")
        state = StandardizationState.fit(self.X[train], self.Y[train])
        return replace(self, X=state.transform_x(self.X), Y=state.transform_y(self.Y), standardization=state)

    def raw(self) -> Tuple[np.ndarray, np.ndarray]:
        """X, Y in the original units"""
        if self.standardization is None:
            return self.X, self.Y
        return self.standardization.inverse_x(self.X), self.standardization.inverse_y(self.Y)


def reject_constant_columns(values: np.ndarray, side: str, names: Optional[Sequence[str]] = None) -> None:
    if values.shape[0] == 0:
        return
    constant = np.flatnonzero(values.std(axis=0) == 0.0)
    if constant.size:
        labels = [names[i] if names else f"{side}{i}" for i in constant]
        raise DegenerateInputError(f"constant column(s) cannot be standardized: {', '.join(labels)}",
                                   code="constant_column")
