"""
Unit tests for conformal calibration, re-ranking and set evaluation
"""

import itertools
import math

import numpy as np
import pytest

from neuralvqr.conformal.assignment import match_points, solve_assignment, squared_distances
from neuralvqr.conformal.calibration import (
    calibrate,
    calibrate_hpd,
    calibrate_pb,
    calibrate_rpb,
    lower_order_index,
    membership,
    predict_pb,
    predict_set,
    quantile_baseline,
    quantile_radius,
    upper_order_index,
)
from neuralvqr.conformal.evaluation import (
    bounding_box,
    estimate_volume,
    evaluate_sets,
    marginal_coverage,
    worst_slab_coverage,
)
from neuralvqr.conformal.rerank import RerankMap, apply_rerank, fit_rerank
from neuralvqr.engine.model import MapResult, QuantileModel
from neuralvqr.engine.reference_models import AffineRankModel
from neuralvqr.types.conformal import CalibrationArtifact, ConformalMethod, Membership
from neuralvqr.types.errors import DegenerateInputError, ShapeMismatchError
from neuralvqr.types.models import ReferenceLaw


class FlakyRankModel(AffineRankModel):
    """Identity ranks whose solve reports failure for rows with y_0 > 2"""

    def rank(self, Y, X=None):
        result = super().rank(Y, X)
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return MapResult(result.values, Y[:, 0] <= 2.0, result.iterations)


@pytest.fixture
def model():
    return AffineRankModel.identity(2)


class TestOrderIndices:
    """Test conformal order statistics"""

    def test_upper_index(self):
        assert upper_order_index(99, 0.1) == 90
        assert upper_order_index(199, 0.05) == 190
        assert upper_order_index(1000, 0.1) == 901

    def test_lower_index(self):
        assert lower_order_index(99, 0.1) == 10
        assert lower_order_index(5, 0.1) == 0

    def test_quantile_radius(self):
        assert quantile_radius(1, 0.05) == pytest.approx(1.959964, abs=1e-6)
        assert quantile_radius(2, 0.1) == pytest.approx(2.1460, abs=1e-4)


class TestAssignment:
    """Test the exact assignment solver"""

    def test_matches_brute_force(self, rng):
        cost = rng.uniform(0.0, 10.0, (7, 7))
        sigma, total = solve_assignment(cost)
        best = min(sum(cost[i, p[i]] for i in range(7)) for p in itertools.permutations(range(7)))
        assert total == pytest.approx(best, rel=1e-12)
        assert sorted(sigma) == list(range(7))

    def test_identical_clouds_match_exactly(self, rng):
        A = rng.standard_normal((10, 3))
        sigma, total = match_points(A, A)
        assert total == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(sigma, np.arange(10))

    def test_squared_distances_non_negative(self, rng):
        A = rng.standard_normal((5, 2))
        assert np.all(squared_distances(A, A) >= 0.0)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeMismatchError):
            solve_assignment(np.zeros((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            solve_assignment(np.array([[0.0, np.inf], [1.0, 0.0]]))


class TestRerank:
    """Test the discrete OT re-ranking"""

    def test_source_points_map_to_partners(self, rng):
        ranks = rng.standard_normal((30, 2))
        rerank = fit_rerank(ranks, seed=4)
        for i in range(30):
            np.testing.assert_array_equal(apply_rerank(rerank, ranks[i]), rerank.reference[rerank.sigma[i]])

    def test_images_lie_in_unit_ball(self, rng):
        rerank = fit_rerank(rng.standard_normal((50, 3)) * 5, seed=1)
        out = apply_rerank(rerank, rng.standard_normal((200, 3)) * 5)
        assert np.all(np.linalg.norm(out, axis=1) <= 1.0 + 1e-12)

    def test_custom_sampler(self, rng):
        rerank = fit_rerank(rng.standard_normal((4, 2)), sampler=lambda r, n, d: np.zeros((n, d)))
        np.testing.assert_array_equal(apply_rerank(rerank, np.ones(2)), 0.0)

    def test_record_round_trip(self, rng):
        rerank = fit_rerank(rng.standard_normal((6, 2)))
        restored = RerankMap.from_record(rerank.to_record())
        np.testing.assert_array_equal(restored.sigma, rerank.sigma)

    def test_empty_rejected(self):
        with pytest.raises(ShapeMismatchError):
            fit_rerank(np.zeros((0, 2)))


class TestCalibration:
    """Test PB, RPB, HPD and Quantile calibration"""

    def test_pb_radius_is_order_statistic(self, model, rng):
        Y = rng.standard_normal((99, 2))
        artifact = calibrate_pb(model, Y, alpha=0.1)
        assert artifact.order_index == 90
        assert artifact.radius == pytest.approx(np.sort(np.linalg.norm(Y, axis=1))[89])
        assert artifact.scores == sorted(artifact.scores)
        assert not artifact.trivial

    def test_pb_coverage(self, model):
        rng = np.random.default_rng(0)
        artifact = calibrate_pb(model, rng.standard_normal((999, 2)), alpha=0.1)
        flags = membership(model, artifact, rng.standard_normal((4000, 2)))
        assert marginal_coverage(flags) == pytest.approx(0.9, abs=0.03)

    def test_too_few_points_is_trivial(self, model, rng):
        artifact = calibrate_pb(model, rng.standard_normal((5, 2)), alpha=0.1)
        assert artifact.trivial
        assert math.isinf(artifact.radius)
        flags = membership(model, artifact, rng.standard_normal((10, 2)) * 100)
        assert np.all(flags == Membership.IN.value)

    def test_failed_points_score_conservatively(self, rng):
        model = FlakyRankModel.identity(2)
        Y = rng.standard_normal((99, 2))
        Y[:3, 0] = 5.0
        artifact = calibrate_pb(model, Y, alpha=0.1)
        assert artifact.failed_points == 3
        assert math.isinf(artifact.scores[-1])
        assert math.isfinite(artifact.radius)

    def test_unknown_membership(self, rng):
        model = FlakyRankModel.identity(2)
        artifact = calibrate_pb(model, rng.standard_normal((99, 2)), alpha=0.1)
        flags = membership(model, artifact, np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 50.0]]))
        assert flags.tolist() == [Membership.IN.value, Membership.UNKNOWN.value, Membership.OUT.value]

    def test_rpb_splits_in_data_order(self, model, rng):
        Y = rng.standard_normal((100, 2))
        artifact = calibrate_rpb(model, Y, alpha=0.1, seed=2)
        assert artifact.n_fit == 50
        assert artifact.n == 50
        assert artifact.radius <= 1.0 + 1e-12
        assert len(artifact.rerank.sigma) == 50

    def test_rpb_coverage(self, model):
        rng = np.random.default_rng(3)
        artifact = calibrate_rpb(model, rng.standard_normal((1000, 2)), alpha=0.2)
        flags = membership(model, artifact, rng.standard_normal((2000, 2)))
        assert marginal_coverage(flags) == pytest.approx(0.8, abs=0.05)

    def test_rpb_split_fraction_checked(self, model, rng):
        with pytest.raises(ValueError):
            calibrate_rpb(model, rng.standard_normal((10, 2)), split_fraction=1.0)

    def test_hpd_threshold_and_coverage(self, model):
        rng = np.random.default_rng(5)
        artifact = calibrate_hpd(model, rng.standard_normal((999, 2)), alpha=0.1)
        assert artifact.order_index == 100
        assert artifact.threshold == pytest.approx(artifact.scores[99])
        flags = membership(model, artifact, rng.standard_normal((4000, 2)))
        assert marginal_coverage(flags) == pytest.approx(0.9, abs=0.03)

    def test_hpd_sets_are_centered_discs(self, model, rng):
        artifact = calibrate_hpd(model, rng.standard_normal((199, 2)), alpha=0.1)
        # the Gaussian density decreases with the norm
        flags = membership(model, artifact, np.array([[0.0, 0.0], [0.1, 0.0], [6.0, 0.0]]))
        assert flags.tolist() == [1, 1, 0]

    def test_hpd_scaled_model(self, rng):
        model = AffineRankModel(2.0 * np.eye(2))
        artifact = calibrate_hpd(model, rng.standard_normal((99, 2)) / 2.0, alpha=0.1)
        # density includes det(2I) = 4
        assert max(artifact.scores) <= 4.0 / (2 * math.pi) + 1e-12

    def test_affine_jacobian_is_the_matrix(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        jacobians, ok = AffineRankModel(A).rank_jacobian_batch(np.zeros((3, 2)))
        assert ok.all()
        np.testing.assert_array_equal(jacobians, np.broadcast_to(A, (3, 2, 2)))

    @pytest.mark.parametrize("A", [[[1.0, 0.5], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]]])
    def test_affine_model_needs_a_convex_gradient(self, A):
        with pytest.raises(ValueError):
            AffineRankModel(np.array(A))

    def test_quantile_baseline(self, model):
        artifact = quantile_baseline(model, alpha=0.1)
        assert artifact.n == 0
        assert artifact.radius == pytest.approx(quantile_radius(2, 0.1))

    def test_quantile_needs_gaussian_reference(self, quadratic_params):
        ball_model = QuantileModel(quadratic_params, reference=ReferenceLaw.UNIFORM_BALL)
        with pytest.raises(ValueError):
            quantile_baseline(ball_model)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_range(self, model, rng, alpha):
        with pytest.raises(ValueError):
            calibrate_pb(model, rng.standard_normal((10, 2)), alpha=alpha)

    def test_wrong_dimension(self, model, rng):
        with pytest.raises(ShapeMismatchError):
            calibrate_pb(model, rng.standard_normal((10, 3)))

    @pytest.mark.parametrize("method", list(ConformalMethod))
    def test_dispatch(self, model, rng, method):
        artifact = calibrate(method, model, rng.standard_normal((40, 2)), alpha=0.2)
        assert artifact.method == method

    def test_artifact_round_trip(self, model, rng):
        artifact = calibrate_rpb(model, rng.standard_normal((20, 2)), alpha=0.2)
        restored = CalibrationArtifact.model_validate_json(artifact.model_dump_json())
        assert restored == artifact


class TestPredictionSet:
    """Test the set membership oracle"""

    def test_pb_set_is_rank_ball(self, model, rng):
        artifact = calibrate_pb(model, rng.standard_normal((99, 2)), alpha=0.1)
        region = predict_pb(model, artifact)
        assert np.zeros(2) in region
        assert np.array([artifact.radius * 1.01, 0.0]) not in region

    def test_predict_pb_rejects_other_methods(self, model, rng):
        with pytest.raises(ValueError):
            predict_pb(model, quantile_baseline(model))

    def test_conditioned_set_broadcasts_x(self, rng):
        model = AffineRankModel.identity(2, d_x=1)
        artifact = quantile_baseline(model)
        flags = predict_set(model, artifact, x=[0.3]).contains(rng.standard_normal((5, 2)) * 0.1)
        assert np.all(flags == 1)


class TestEvaluation:
    """Test coverage, worst-slab coverage and volume"""

    def test_unknown_counts_as_miss(self):
        assert marginal_coverage(np.array([1, 0, -1, 1])) == 0.5

    def test_full_coverage_slabs(self, rng):
        assert worst_slab_coverage(rng.standard_normal((200, 2)), np.ones(200, dtype=bool), directions=20) == 1.0

    def test_no_conditioning_is_marginal(self):
        covered = np.array([True, False, True, True])
        assert worst_slab_coverage(np.zeros((4, 0)), covered) == 0.75

    def test_slab_finds_uncovered_region(self, rng):
        X = rng.uniform(0.0, 1.0, (500, 1))
        assert worst_slab_coverage(X, X[:, 0] < 0.5, directions=4) == 0.0

    def test_disc_volume(self):
        def disc(points):
            return (np.linalg.norm(points, axis=1) <= 1.0).astype(np.int8)
        volume = estimate_volume(disc, np.array([-1.0, -1.0]), np.array([1.0, 1.0]), n_points=100_000)
        assert volume == pytest.approx(math.pi, rel=0.01)

    def test_empty_set_volume_is_finite(self):
        volume = estimate_volume(lambda p: np.zeros(len(p), dtype=np.int8), np.zeros(2), np.ones(2), n_points=1000)
        assert volume == pytest.approx(0.5 / 1000)

    def test_bounding_box_inflation(self):
        lo, hi = bounding_box(np.array([[0.0, 0.0], [4.0, 2.0]]))
        np.testing.assert_allclose(lo, [-0.5, -0.25])
        np.testing.assert_allclose(hi, [4.5, 2.25])

    def test_degenerate_box(self):
        with pytest.raises(DegenerateInputError):
            bounding_box(np.array([[1.0, 0.0], [1.0, 2.0]]))

    def test_evaluate_quantile_sets(self, rng):
        model = AffineRankModel.identity(2, d_x=1)
        artifact = quantile_baseline(model, alpha=0.1)
        Y, X = rng.standard_normal((1000, 2)), rng.uniform(size=(1000, 1))
        result = evaluate_sets(model, artifact, Y, X, box=(np.full(2, -4.0), np.full(2, 4.0)),
                               volume_points=20_000, volume_conditions=2, wsc_directions=10)
        assert result.coverage == pytest.approx(0.9, abs=0.03)
        assert result.wsc <= result.coverage
        disc_area = math.pi * quantile_radius(2, 0.1) ** 2
        assert result.log_volume_per_dim == pytest.approx(math.log(disc_area) / 2, abs=0.05)
        assert result.unknown == 0
