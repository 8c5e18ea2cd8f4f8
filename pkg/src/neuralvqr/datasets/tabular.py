"""
CSV ingestion for real tabular data
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..types.errors import CsvParseError
from .table import SampleTable, make_splits, reject_constant_columns

logger = logging.getLogger(__name__)

DEFAULT_SPLIT = (0.6, 0.2, 0.2)


def data_line_numbers(path: Union[str, Path]) -> np.ndarray:
    """1-based file line of every data row, skipping blank lines as the parser does"""
    with open(path, encoding="utf-8", errors="replace") as f:
        nonblank = [i for i, line in enumerate(f, start=1) if line.strip()]
    return np.asarray(nonblank[1:], dtype=int)


def numeric_block(frame: pd.DataFrame, columns: Sequence[str],
                  line_numbers: Optional[np.ndarray] = None) -> np.ndarray:
    """Columns as float64; rows that do not parse are reported by file line number"""
    raw = frame[list(columns)]
    parsed = raw.apply(pd.to_numeric, errors="coerce")
    bad = parsed.isna().any(axis=1)
    if bad.any():
        positions = np.flatnonzero(bad.to_numpy())
        if line_numbers is not None and len(line_numbers) == len(frame):
            lines = [int(line_numbers[i]) for i in positions]
        else:
            # header is line 1, the first data row line 2
            lines = [int(i) + 2 for i in positions]
        shown = ", ".join(str(line) for line in lines[:20])
        more = f" (+{len(lines) - 20} more)" if len(lines) > 20 else ""
        raise CsvParseError(f"missing or non-numeric values on line(s) {shown}{more}", line_numbers=lines)
    return parsed.to_numpy(dtype=np.float64)


def load_csv(path: Union[str, Path], x_columns: Sequence[str], y_columns: Sequence[str],
             split_ratios: Sequence[float] = DEFAULT_SPLIT, seed: int = 0) -> SampleTable:
    """Read, split and standardize a CSV table with train-split statistics"""
    path = Path(path)
    if not y_columns:
        raise CsvParseError("at least one y column is required")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        raise CsvParseError(f"{path}: file not found") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CsvParseError(f"{path}: {e}") from e

    missing: List[str] = [c for c in list(x_columns) + list(y_columns) if c not in frame.columns]
    if missing:
        raise CsvParseError(f"{path}: column(s) not found: {', '.join(missing)}")
    if frame.empty:
        raise CsvParseError(f"{path}: no data rows")

    lines = data_line_numbers(path)
    X = numeric_block(frame, x_columns, lines) if x_columns else np.zeros((len(frame), 0))
    Y = numeric_block(frame, y_columns, lines)
    splits = make_splits(len(frame), split_ratios, seed)
    train = np.asarray(splits.train, dtype=int)
    reject_constant_columns(X[train], "x", list(x_columns))
    reject_constant_columns(Y[train], "y", list(y_columns))

    table = SampleTable(
        X=X, Y=Y, generator=f"csv:{path.name}", seed=seed, splits=splits,
        params={"x_columns": list(x_columns), "y_columns": list(y_columns)},
    ).standardized()
    logger.info(
        f"loaded {len(table)} rows from {path} (d_x={table.d_x}, d_y={table.d_y}; "
        f"splits {len(splits.train)}/{len(splits.cal)}/{len(splits.test)})"
    )
    return table
