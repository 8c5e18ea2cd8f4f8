"""
API handlers for the model server
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..conformal.calibration import membership, quantile_baseline
from ..datasets.transforms import ServingUnits
from ..engine.model import QuantileModel
from ..storage.artifacts import load_calibration, load_model, read_json
from ..types.api import (
    MembershipRequest,
    MembershipResponse,
    ModelInfo,
    QuantileRequest,
    QuantileResponse,
    RankRequest,
    RankResponse,
)
from ..types.conformal import CalibrationArtifact, ConformalMethod
from ..types.datasets import TableSidecar
from ..types.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

MODEL_FILE = "model.json"
CALIBRATION_GLOB = "calibration-*.json"
SIDECAR_FILE = "data.json"


class CalibrationNotFound(LookupError):
    pass


@dataclass
class ModelState:
    """The served model, its calibrated sets keyed by (method, alpha), and its data units"""
    model: Optional[QuantileModel] = None
    calibrations: Dict[Tuple[str, float], CalibrationArtifact] = field(default_factory=dict)
    source: Optional[str] = None
    units: ServingUnits = field(default_factory=ServingUnits)

    def calibration(self, method: ConformalMethod, alpha: float) -> CalibrationArtifact:
        for (m, a), artifact in self.calibrations.items():
            if m == method.value and abs(a - alpha) < 1e-12:
                return artifact
        if method == ConformalMethod.QUANTILE:
            artifact = quantile_baseline(self.model, alpha)
            self.calibrations[(method.value, alpha)] = artifact
            return artifact
        raise CalibrationNotFound(f"no {method.value} calibration at alpha={alpha}")


def load_state(model_dir: Optional[str], calibration_dir: Optional[str] = None) -> ModelState:
    """Model from <model_dir>/model.json, calibrations from calibration_dir (default: model_dir).

    A data.json sidecar next to the model supplies the standardization and
    residual setting of the training table; without one, requests are taken
    to be in model units.
    """
    if not model_dir:
        logger.warning("no model directory configured; serving without a model")
        return ModelState()
    model_path = Path(model_dir) / MODEL_FILE
    if not model_path.exists():
        logger.warning(f"{model_path} not found; serving without a model")
        return ModelState()
    state = ModelState(model=load_model(model_path), source=str(model_dir))
    sidecar_path = Path(model_dir) / SIDECAR_FILE
    if sidecar_path.exists():
        state.units = ServingUnits.from_sidecar(TableSidecar.model_validate(read_json(sidecar_path)))
        logger.info(f"serving in original data units (residual={state.units.residual})")
    for path in sorted(Path(calibration_dir or model_dir).glob(CALIBRATION_GLOB)):
        artifact = load_calibration(path)
        state.calibrations[(artifact.method.value, artifact.alpha)] = artifact
    logger.info(f"loaded model from {model_path} with {len(state.calibrations)} calibration(s)")
    return state


def _conditions(state: ModelState, x: Optional[List[List[float]]], n: int) -> Optional[np.ndarray]:
    model = state.model
    if x is None:
        if model.d_x:
            raise ShapeMismatchError(f"model expects conditioning inputs of dimension {model.d_x}")
        return None
    X = np.asarray(x, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d_x or X.shape[0] not in (1, n):
        raise ShapeMismatchError(f"x must be 1 or {n} rows of dimension {model.d_x}, got shape {X.shape}")
    return state.units.to_model_x(np.broadcast_to(X, (n, model.d_x)).copy())


def _points(values: List[List[float]], d: int) -> np.ndarray:
    P = np.asarray(values, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != d:
        raise ShapeMismatchError(f"points must be rows of dimension {d}, got shape {P.shape}")
    return P


def _predictions(values: Optional[List[List[float]]]) -> Optional[np.ndarray]:
    return None if values is None else np.asarray(values, dtype=np.float64)


def _elapsed_ms(start: float) -> int:
    return max(1, int((time.perf_counter() - start) * 1000))


def rank_points(state: ModelState, req: RankRequest) -> RankResponse:
    start = time.perf_counter()
    model = state.model
    Y = _points(req.points, model.d_y)
    X = _conditions(state, req.x, Y.shape[0])
    result = model.rank(state.units.to_model_y(Y, _predictions(req.predictions)), X)
    return RankResponse(
        ranks=result.values.tolist(), converged=result.converged.tolist(),
        iterations=np.asarray(result.iterations, dtype=int).tolist(), duration_ms=_elapsed_ms(start),
    )


def quantile_points(state: ModelState, req: QuantileRequest) -> QuantileResponse:
    start = time.perf_counter()
    model = state.model
    U = _points(req.ranks, model.d_y)
    result = model.quantile(U, _conditions(state, req.x, U.shape[0]))
    points = state.units.from_model_y(result.values, _predictions(req.predictions))
    return QuantileResponse(points=points.tolist(), converged=result.converged.tolist(),
                            duration_ms=_elapsed_ms(start))


def membership_points(state: ModelState, req: MembershipRequest) -> MembershipResponse:
    start = time.perf_counter()
    model = state.model
    artifact = state.calibration(req.method, req.alpha)
    Y = _points(req.points, model.d_y)
    X = _conditions(state, req.x, Y.shape[0])
    flags = membership(model, artifact, state.units.to_model_y(Y, _predictions(req.predictions)), X)
    unbounded = artifact.trivial or (artifact.radius is not None and math.isinf(artifact.radius))
    return MembershipResponse(
        membership=flags.astype(int).tolist(), method=artifact.method, alpha=artifact.alpha,
        radius=None if unbounded else artifact.radius, threshold=artifact.threshold,
        unbounded=unbounded, duration_ms=_elapsed_ms(start),
    )


def model_info(state: ModelState) -> ModelInfo:
    model = state.model
    return ModelInfo(
        variant=model.variant.value, reference=model.reference.value, d_y=model.d_y, d_x=model.d_x,
        calibrations=sorted(f"{m}@{a}" for m, a in state.calibrations),
        original_units=not state.units.identity, residual=state.units.residual,
    )
