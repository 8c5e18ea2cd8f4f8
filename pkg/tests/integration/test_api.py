"""
Integration tests for the model-serving HTTP endpoints
"""

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from neuralvqr.api.handlers import load_state
from neuralvqr.api.server import create_app
from neuralvqr.conformal.calibration import calibrate_pb
from neuralvqr.storage.artifacts import save_calibration, save_model, write_json
from neuralvqr.types.datasets import StandardizationState, TableSidecar
from neuralvqr.types.models import ReferenceLaw, Variant


@pytest.fixture
def model_dir(tmp_path, identity_model):
    save_model(tmp_path / "model.json", identity_model)
    cal = np.random.default_rng(0).standard_normal((200, 2))
    save_calibration(tmp_path / "calibration-PB-0.1.json", calibrate_pb(identity_model, cal, alpha=0.1))
    return tmp_path


@pytest.fixture
def client(model_dir):
    with TestClient(create_app(str(model_dir))) as client:
        yield client


def test_health_check(client):
    """Test health check endpoint"""
    response = client.get("/healthz")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "ok"
    assert "now" in data
    assert data["components"]["model"] == "loaded"


def test_metrics_endpoint(client):
    """Test metrics endpoint"""
    response = client.get("/metrics")
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/plain")


def test_model_info(client):
    """Test model description lists stored calibrations"""
    response = client.get("/v1/model")
    assert response.status_code == 200
    data = response.json()
    assert data["variant"] == Variant.U.value
    assert data["reference"] == ReferenceLaw.GAUSSIAN.value
    assert (data["d_y"], data["d_x"]) == (2, 0)
    assert data["calibrations"] == ["PB@0.1"]


def test_rank_identity(client):
    """Ranks of the identity model equal the points"""
    points = [[0.5, -1.0], [2.0, 0.25]]
    response = client.post("/v1/rank", json={"points": points})
    assert response.status_code == 200
    data = response.json()
    np.testing.assert_allclose(data["ranks"], points, atol=1e-5)
    assert data["converged"] == [True, True]
    assert data["duration_ms"] >= 1


def test_quantile_identity(client):
    """Quantiles of the identity model equal the ranks"""
    ranks = [[0.1, 0.2], [-1.5, 3.0]]
    response = client.post("/v1/quantile", json={"ranks": ranks})
    assert response.status_code == 200
    np.testing.assert_allclose(response.json()["points"], ranks, atol=1e-10)


def test_membership(client):
    """Test membership against the stored PB calibration"""
    response = client.post("/v1/membership", json={"points": [[0.0, 0.0], [10.0, 10.0]], "alpha": 0.1})
    assert response.status_code == 200
    data = response.json()
    assert data["membership"] == [1, 0]
    assert data["method"] == "PB"
    assert data["radius"] == pytest.approx(2.146, abs=0.3)
    assert data["unbounded"] is False


def test_membership_quantile_baseline_on_demand(client):
    """The Quantile baseline needs no stored calibration"""
    response = client.post("/v1/membership", json={"points": [[0.0, 0.0]], "method": "Quantile", "alpha": 0.5})
    assert response.status_code == 200
    assert response.json()["membership"] == [1]


def test_membership_unknown_calibration(client):
    """Test membership at an alpha that was never calibrated"""
    response = client.post("/v1/membership", json={"points": [[0.0, 0.0]], "alpha": 0.3})
    assert response.status_code == 404
    assert response.json()["detail"]["error"] == "calibration_not_found"


def test_rank_wrong_dimension(client):
    """Test rank request with points of the wrong dimension"""
    response = client.post("/v1/rank", json={"points": [[1.0, 2.0, 3.0]]})
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "shape_mismatch"


def test_unconditional_model_rejects_x(client):
    """Test conditioning inputs sent to a model without any"""
    response = client.post("/v1/rank", json={"points": [[1.0, 2.0]], "x": [[0.5]]})
    assert response.status_code == 400


def test_empty_points_rejected(client):
    """Test request schema validation"""
    response = client.post("/v1/rank", json={"points": []})
    assert response.status_code == 422


def test_no_model_loaded(tmp_path):
    """Test endpoints when the model directory holds no model"""
    with TestClient(create_app(str(tmp_path))) as client:
        health = client.get("/healthz").json()
        assert health["components"]["model"] == "missing"
        response = client.get("/v1/model")
        assert response.status_code == 503
        assert response.json()["detail"]["error"] == "model_not_loaded"
        response = client.post("/v1/rank", json={"points": [[0.0, 0.0]]})
        assert response.status_code == 503


def _write_sidecar(directory, generator="gaussian"):
    sidecar = TableSidecar(
        generator=generator, seed=0, x_columns=[], y_columns=["y0", "y1"],
        standardization=StandardizationState(y_mean=[10.0, -5.0], y_std=[2.0, 4.0]),
    )
    write_json(directory / "data.json", sidecar.model_dump(mode="json"))


def test_points_in_original_units(model_dir):
    """Points are standardized with the training statistics; quantiles come back in original units"""
    _write_sidecar(model_dir)
    with TestClient(create_app(str(model_dir))) as client:
        assert client.get("/v1/model").json()["original_units"] is True
        ranks = client.post("/v1/rank", json={"points": [[12.0, -1.0], [10.0, -5.0]]}).json()["ranks"]
        np.testing.assert_allclose(ranks, [[1.0, 1.0], [0.0, 0.0]], atol=1e-5)
        points = client.post("/v1/quantile", json={"ranks": [[1.0, 1.0]]}).json()["points"]
        np.testing.assert_allclose(points, [[12.0, -1.0]], atol=1e-10)
        membership = client.post("/v1/membership", json={"points": [[10.0, -5.0], [0.0, 0.0]]}).json()
        assert membership["membership"] == [1, 0]


def test_residual_model_requires_predictions(model_dir):
    """A model fitted on residuals subtracts and restores per-row point predictions"""
    _write_sidecar(model_dir, generator="csv+residual")
    with TestClient(create_app(str(model_dir))) as client:
        info = client.get("/v1/model").json()
        assert info["residual"] is True

        response = client.post("/v1/rank", json={"points": [[13.0, 0.0]]})
        assert response.status_code == 400
        assert response.json()["detail"]["error"] == "predictions_required"

        response = client.post("/v1/rank", json={"points": [[13.0, 0.0]], "predictions": [[1.0, 1.0]]})
        assert response.status_code == 200
        np.testing.assert_allclose(response.json()["ranks"], [[1.0, 1.0]], atol=1e-5)

        response = client.post("/v1/quantile", json={"ranks": [[1.0, 1.0]], "predictions": [[1.0, 1.0]]})
        np.testing.assert_allclose(response.json()["points"], [[13.0, 0.0]], atol=1e-10)


def test_predictions_rejected_without_residuals(client):
    """Predictions sent to a model fitted on plain responses"""
    response = client.post("/v1/rank", json={"points": [[0.0, 0.0]], "predictions": [[1.0, 1.0]]})
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "unexpected_predictions"


class TestAsyncClient:
    """Endpoints driven through an ASGI transport"""

    @pytest.fixture
    def app(self, model_dir):
        app = create_app(str(model_dir))
        app.state.models = load_state(str(model_dir))
        return app

    async def test_rank_and_membership(self, app):
        async with httpx.AsyncClient(transport=httpx.ASGITransport(app=app), base_url="http://test") as client:
            rank = await client.post("/v1/rank", json={"points": [[0.5, -1.0]]})
            membership = await client.post("/v1/membership", json={"points": [[0.0, 0.0]]})
        assert rank.status_code == 200
        np.testing.assert_allclose(rank.json()["ranks"], [[0.5, -1.0]], atol=1e-5)
        assert membership.json()["membership"] == [1]

    async def test_missing_model_is_503(self, tmp_path):
        app = create_app(str(tmp_path))
        async with httpx.AsyncClient(transport=httpx.ASGITransport(app=app), base_url="http://test") as client:
            response = await client.post("/v1/quantile", json={"ranks": [[0.0, 0.0]]})
        assert response.status_code == 503
        assert response.json()["detail"]["error"] == "model_not_loaded"
