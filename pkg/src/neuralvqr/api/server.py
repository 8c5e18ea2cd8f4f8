"""
FastAPI server for trained neuralvqr models
"""

import logging
import os
from contextlib import asynccontextmanager
from datetime import datetime
from typing import Callable, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__
from ..metrics.prometheus import api_requests_total, get_metrics_text
from ..types.api import MembershipRequest, QuantileRequest, RankRequest
from ..types.errors import NeuralVqrError
from .handlers import CalibrationNotFound, ModelState, load_state, membership_points, model_info, quantile_points, rank_points

logger = logging.getLogger(__name__)

MODEL_DIR = os.getenv("NEURALVQR_MODEL_DIR")
CALIBRATION_DIR = os.getenv("NEURALVQR_CALIBRATION_DIR")


def _require_model(state: ModelState) -> None:
    if state.model is None:
        raise HTTPException(status_code=503, detail={"error": "model_not_loaded"})


def _guarded(endpoint: str, state: ModelState, handler: Callable, request):
    """Run handler(state, request), mapping errors onto the API's error payloads"""
    _require_model(state)
    try:
        response = handler(state, request)
    except CalibrationNotFound:
        api_requests_total.labels(endpoint=endpoint, outcome="not_found").inc()
        raise HTTPException(status_code=404, detail={"error": "calibration_not_found"})
    except ValueError as e:
        api_requests_total.labels(endpoint=endpoint, outcome="invalid").inc()
        code = e.code if isinstance(e, NeuralVqrError) else "invalid_request"
        raise HTTPException(status_code=400, detail={"error": code})
    except Exception as e:
        api_requests_total.labels(endpoint=endpoint, outcome="error").inc()
        logger.error(f"{endpoint} failed: {e}")
        raise HTTPException(status_code=500, detail={"error": "internal_error"})
    api_requests_total.labels(endpoint=endpoint, outcome="ok").inc()
    return response


def create_app(model_dir: Optional[str] = None, calibration_dir: Optional[str] = None) -> FastAPI:
    """Create and configure the FastAPI application"""
    model_dir = model_dir or MODEL_DIR
    calibration_dir = calibration_dir or CALIBRATION_DIR

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        logger.info("Starting neuralvqr model server...")
        app.state.models = load_state(model_dir, calibration_dir)
        yield
        logger.info("Shutting down neuralvqr model server...")

    app = FastAPI(
        title="neuralvqr",
        description="Conditional vector quantiles, ranks and conformal prediction sets",
        version=__version__,
        lifespan=lifespan,
    )
    app.state.models = ModelState()

    @app.get("/healthz")
    async def health_check():
        """Health check endpoint"""
        state: ModelState = app.state.models
        return {
            "status": "ok",
            "now": datetime.now().isoformat(),
            "components": {
                "api": "healthy",
                "model": "loaded" if state.model is not None else "missing",
            },
        }

    @app.get("/metrics", response_class=PlainTextResponse)
    async def metrics():
        """Prometheus metrics endpoint"""
        try:
            return get_metrics_text()
        except Exception:
            raise HTTPException(status_code=500, detail={"error": "metrics_unavailable"})

    @app.get("/v1/model")
    async def model_endpoint():
        """Describe the served model and its calibrations"""
        state: ModelState = app.state.models
        _require_model(state)
        return model_info(state)

    @app.post("/v1/rank")
    def rank_endpoint(request: RankRequest):
        """Map points y to ranks u = Q^-1(y, x)"""
        state: ModelState = app.state.models
        return _guarded("rank", state, rank_points, request)

    @app.post("/v1/quantile")
    def quantile_endpoint(request: QuantileRequest):
        """Map ranks u to points y = Q(u, x)"""
        state: ModelState = app.state.models
        return _guarded("quantile", state, quantile_points, request)

    @app.post("/v1/membership")
    def membership_endpoint(request: MembershipRequest):
        """Test points against a calibrated prediction set"""
        state: ModelState = app.state.models
        return _guarded("membership", state, membership_points, request)

    return app
