"""
Unit tests for the optimizer, training objectives and training loops
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from neuralvqr.datasets import gen_banana
from neuralvqr.engine.conjugate import solve_conjugate_batch
from neuralvqr.engine.picnn import PicnnParams, actnorm_init, picnn_forward, picnn_grad_u
from neuralvqr.training.loops import Trainer, train, train_acnqr, train_cnqr, train_ecnqr
from neuralvqr.training.objectives import (
    VariantAdapter,
    VariantBatch,
    entropic_rank,
    entropic_value_and_grad,
    evaluate_objective,
    gradients_finite,
    semi_dual_value_and_grad,
    soft_conjugate,
)
from neuralvqr.training.optim import CosineSchedule, OptimizerState, adamw_step, clip_gradients, global_norm
from neuralvqr.types.errors import ShapeMismatchError, TrainingDivergedError
from neuralvqr.types.models import PicnnConfig, ReferenceLaw, SolverSettings, TrainConfig, TrainMethod, Variant


class TestAdamW:
    """Test the AdamW update"""

    def test_zero_gradient_no_decay_is_a_no_op(self):
        params = {"w": np.array([1.0, -2.0])}
        state = OptimizerState.for_params(params)
        _, updated = adamw_step(state, params, {"w": np.zeros(2)}, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(updated["w"], params["w"])

    def test_weight_decay_only(self):
        params = {"w": np.array([2.0, -4.0])}
        state = OptimizerState.for_params(params)
        _, updated = adamw_step(state, params, {"w": np.zeros(2)}, lr=0.1, weight_decay=0.1)
        np.testing.assert_allclose(updated["w"], params["w"] * (1 - 0.01))

    def test_step_decreases_quadratic(self):
        params = {"w": np.array([3.0])}
        state = OptimizerState.for_params(params)
        for _ in range(5):
            # gradient of w^2 / 2
            state, params = adamw_step(state, params, {"w": params["w"].copy()}, lr=0.1)
        assert abs(params["w"][0]) < 3.0
        assert state.step == 5

    def test_inputs_not_mutated(self):
        params = {"w": np.ones(3)}
        state = OptimizerState.for_params(params)
        adamw_step(state, params, {"w": np.ones(3)}, lr=0.5)
        np.testing.assert_array_equal(params["w"], 1.0)
        np.testing.assert_array_equal(state.m["w"], 0.0)

    def test_mismatched_names(self):
        params = {"w": np.ones(2)}
        with pytest.raises(ShapeMismatchError):
            adamw_step(OptimizerState.for_params(params), params, {"v": np.ones(2)}, lr=0.1)


class TestClipping:
    """Test global-norm gradient clipping"""

    def test_below_threshold_unchanged(self):
        grads = {"a": np.array([3.0, 4.0])}
        clipped, norm = clip_gradients(grads, 10.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_array_equal(clipped["a"], grads["a"])

    def test_above_threshold_halved(self):
        grads = {"a": np.array([12.0, 16.0])}
        clipped, norm = clip_gradients(grads, 10.0)
        assert norm == pytest.approx(20.0)
        np.testing.assert_allclose(clipped["a"], [6.0, 8.0])
        assert global_norm(clipped) == pytest.approx(10.0)

    def test_norm_spans_all_arrays(self):
        grads = {"a": np.array([6.0]), "b": np.array([[8.0]])}
        clipped, norm = clip_gradients(grads, 5.0)
        assert norm == pytest.approx(10.0)
        assert clipped["a"][0] == pytest.approx(3.0)
        assert clipped["b"][0, 0] == pytest.approx(4.0)

    def test_zero_gradients_stay_zero(self):
        clipped, norm = clip_gradients({"a": np.zeros(4)}, 1.0)
        assert norm == 0.0
        np.testing.assert_array_equal(clipped["a"], 0.0)

    def test_max_norm_must_be_positive(self):
        with pytest.raises(ValueError):
            clip_gradients({"a": np.ones(2)}, 0.0)


class TestCosineSchedule:
    """Test learning-rate annealing"""

    def test_endpoints(self):
        schedule = CosineSchedule(0.1, 100)
        assert schedule.lr(0) == pytest.approx(0.1)
        assert schedule.lr(50) == pytest.approx(0.05)
        assert schedule.lr(100) == pytest.approx(0.0, abs=1e-15)
        assert schedule.lr(150) == pytest.approx(0.0, abs=1e-15)

    def test_monotone_without_restarts(self):
        schedule = CosineSchedule(1.0, 40)
        rates = [schedule.lr(s) for s in range(41)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_restarts(self):
        schedule = CosineSchedule(1.0, 1000, restart_period=10)
        assert schedule.lr(10) == pytest.approx(1.0)
        assert schedule.lr(15) == pytest.approx(schedule.lr(5))


class TestSemiDual:
    """Test the exact semi-dual estimate and its gradient"""

    def test_quadratic_value(self, quadratic_params, rng):
        U, Y = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
        batch = VariantBatch(U, Y, np.zeros((16, 0)))
        # u_check = y is the exact conjugate argmax for phi = |u|^2 / 2
        estimate, _ = semi_dual_value_and_grad(quadratic_params, batch, Y)
        assert estimate.potential_term == pytest.approx(0.5 * np.mean(np.sum(U * U, axis=1)))
        assert estimate.conjugate_term == pytest.approx(0.5 * np.mean(np.sum(Y * Y, axis=1)))
        assert estimate.value == pytest.approx(estimate.potential_term + estimate.conjugate_term)

    def test_matches_evaluate_objective(self, small_potential, rng):
        batch = VariantBatch(rng.standard_normal((8, 2)), rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
        u_check = rng.standard_normal((8, 2))
        estimate, _ = semi_dual_value_and_grad(small_potential, batch, u_check)
        assert evaluate_objective(small_potential, batch, u_check).value == pytest.approx(estimate.value, rel=1e-12)

    def test_gradient_matches_finite_differences(self, small_potential, rng):
        batch = VariantBatch(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), rng.standard_normal((4, 1)))
        u_check = rng.standard_normal((4, 2))
        _, grads = semi_dual_value_and_grad(small_potential, batch, u_check)
        h = 1e-6
        for name in small_potential.names[:6]:
            idx = tuple(rng.integers(s) for s in small_potential.arrays[name].shape)
            arrays_p = {k: v.copy() for k, v in small_potential.arrays.items()}
            arrays_m = {k: v.copy() for k, v in small_potential.arrays.items()}
            arrays_p[name][idx] += h
            arrays_m[name][idx] -= h
            fd = (evaluate_objective(small_potential.replace(arrays_p), batch, u_check).value
                  - evaluate_objective(small_potential.replace(arrays_m), batch, u_check).value) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_variant_roles(self, rng):
        Y, X = rng.standard_normal((5, 2)), rng.standard_normal((5, 1))
        u_batch = VariantAdapter(Variant.U, ReferenceLaw.GAUSSIAN).split(Y, X, rng)
        y_batch = VariantAdapter(Variant.Y, ReferenceLaw.GAUSSIAN).split(Y, X, rng)
        np.testing.assert_array_equal(u_batch.conjugate_points, Y)
        np.testing.assert_array_equal(y_batch.potential_points, Y)

    def test_solve_domain_follows_reference(self):
        assert VariantAdapter(Variant.U, ReferenceLaw.UNIFORM_BALL).solve_domain.kind == "ball"
        assert VariantAdapter(Variant.Y, ReferenceLaw.UNIFORM_BALL).solve_domain.kind == "unbounded"


class TestEntropic:
    """Test soft conjugates and entropic ranks"""

    def test_soft_conjugate_bounds(self, small_potential, rng):
        samples = rng.standard_normal((256, 2))
        y, x, eps = rng.standard_normal(2), rng.standard_normal(1), 0.05
        hard = np.max(samples @ y - picnn_forward(small_potential, samples, np.broadcast_to(x, (256, 1))))
        soft = soft_conjugate(small_potential, y, x, samples, eps)
        assert hard - 1e-12 <= soft <= hard + eps * math.log(256) + 1e-12

    def test_objective_matches_soft_conjugate(self, small_potential, rng):
        B, m, eps = 3, 40, 0.1
        batch = VariantBatch(rng.standard_normal((B, 2)), rng.standard_normal((B, 2)), rng.standard_normal((B, 1)))
        samples = rng.standard_normal((B, m, 2))
        estimate, grads = entropic_value_and_grad(small_potential, batch, samples, eps, chunk=7)
        expected = np.mean([
            soft_conjugate(small_potential, batch.conjugate_points[b], batch.X[b], samples[b], eps) for b in range(B)
        ])
        assert estimate.conjugate_term == pytest.approx(expected, rel=1e-10)
        assert gradients_finite(grads)

    def test_chunking_does_not_change_the_estimate(self, small_potential, rng):
        batch = VariantBatch(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), rng.standard_normal((2, 1)))
        samples = rng.standard_normal((2, 30, 2))
        a, ga = entropic_value_and_grad(small_potential, batch, samples, 0.2, chunk=30)
        b, gb = entropic_value_and_grad(small_potential, batch, samples, 0.2, chunk=4)
        assert a.value == pytest.approx(b.value, rel=1e-12)
        for name in ga:
            np.testing.assert_allclose(ga[name], gb[name], atol=1e-12)

    def test_entropic_gradient_matches_finite_differences(self, small_potential, rng):
        batch = VariantBatch(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), rng.standard_normal((2, 1)))
        samples = rng.standard_normal((2, 25, 2))
        _, grads = entropic_value_and_grad(small_potential, batch, samples, 0.3)
        h = 1e-6
        for name in small_potential.names[:5]:
            idx = tuple(rng.integers(s) for s in small_potential.arrays[name].shape)
            arrays_p = {k: v.copy() for k, v in small_potential.arrays.items()}
            arrays_m = {k: v.copy() for k, v in small_potential.arrays.items()}
            arrays_p[name][idx] += h
            arrays_m[name][idx] -= h
            fd = (entropic_value_and_grad(small_potential.replace(arrays_p), batch, samples, 0.3)[0].value
                  - entropic_value_and_grad(small_potential.replace(arrays_m), batch, samples, 0.3)[0].value) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_epsilon_must_be_positive(self, small_potential):
        batch = VariantBatch(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 1)))
        with pytest.raises(ValueError):
            entropic_value_and_grad(small_potential, batch, np.zeros((1, 4, 2)), 0.0)

    def test_entropic_rank_on_quadratic(self, quadratic_params):
        # the Gibbs law is Gaussian with mean y / (1 + eps)
        y = np.array([0.5, -0.3])
        result = entropic_rank(quadratic_params, y, epsilon=1.0, m=20000, seed=3)
        np.testing.assert_allclose(result.u, y / 2.0, atol=0.05)
        assert not result.low_ess

    def test_entropic_rank_is_seeded(self, small_potential):
        a = entropic_rank(small_potential, [0.1, 0.2], [0.0], epsilon=0.5, m=64, seed=9)
        b = entropic_rank(small_potential, [0.1, 0.2], [0.0], epsilon=0.5, m=64, seed=9)
        np.testing.assert_array_equal(a.u, b.u)

    def test_tiny_epsilon_flags_low_ess(self, quadratic_params):
        result = entropic_rank(quadratic_params, [3.0, 3.0], epsilon=1e-6, m=64)
        assert result.low_ess
        assert result.effective_sample_size < 2.0

    @pytest.mark.parametrize("kwargs", [{"epsilon": 0.0}, {"m": 1}])
    def test_entropic_rank_arguments(self, quadratic_params, kwargs):
        with pytest.raises(ValueError):
            entropic_rank(quadratic_params, [0.0, 0.0], **kwargs)


class TestTrainConfig:
    """Test training configuration validation"""

    def test_entropic_requires_u_variant(self):
        with pytest.raises(ValidationError):
            TrainConfig(method=TrainMethod.EC_NQR, variant=Variant.Y)

    def test_inner_iterations_default_by_method(self):
        assert TrainConfig(method=TrainMethod.AC_NQR).resolved_inner_max_iter() == 50
        assert TrainConfig(method=TrainMethod.C_NQR).resolved_inner_max_iter() == 100
        assert TrainConfig(method=TrainMethod.C_NQR, inner_max_iter=7).resolved_inner_max_iter() == 7

    @pytest.mark.parametrize("lr", [float("inf"), float("nan"), -1e-3])
    def test_learning_rate_must_be_finite_and_nonnegative(self, lr):
        with pytest.raises(ValidationError):
            TrainConfig(lr=lr)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=0.1)


class TestTrainer:
    """Test the mini-batch training loops on tiny problems"""

    @pytest.fixture
    def data(self, rng):
        X = rng.uniform(0.0, 1.0, (40, 1))
        Y = rng.standard_normal((40, 2)) + X
        return Y, X

    def test_zero_learning_rate_keeps_parameters(self, data, small_potential):
        config = TrainConfig(method=TrainMethod.C_NQR, lr=0.0, weight_decay=0.1, epochs=2, batch_size=16)
        trainer = Trainer(data, config, small_potential.config, potential=small_potential)
        result = trainer.run()
        for name, value in small_potential.arrays.items():
            np.testing.assert_array_equal(result.potential.arrays[name], value)
        assert len(result.log) == 2
        assert [r.epoch for r in result.log] == [1, 2]

    def test_cnqr_log_is_finite(self, data):
        config = TrainConfig(method=TrainMethod.C_NQR, epochs=2, batch_size=20, lr=1e-3)
        result = train_cnqr(data, config)
        frame = result.log_frame()
        assert list(frame["epoch"]) == [1, 2]
        assert np.all(np.isfinite(frame["objective"]))
        assert result.potential.actnorm_initialized
        assert result.amortizer is None

    def test_acnqr_trains_amortizer(self, data):
        config = TrainConfig(method=TrainMethod.AC_NQR, epochs=1, batch_size=20)
        result = train_acnqr(data, config)
        assert result.amortizer is not None
        assert result.median_epoch_ms() > 0.0

    def test_y_variant_rank_is_the_gradient(self, data):
        config = TrainConfig(method=TrainMethod.C_NQR, variant=Variant.Y, epochs=1, batch_size=20)
        result = train_cnqr(data, config)
        assert np.isfinite(result.log[0].objective)
        Y, X = data
        ranks = result.model().rank(Y[:3], X[:3])
        assert ranks.converged.all()
        np.testing.assert_allclose(ranks.values, picnn_grad_u(result.potential, Y[:3], X[:3]))

    def test_ecnqr_runs(self, data):
        config = TrainConfig(method=TrainMethod.EC_NQR, epochs=1, batch_size=20, m=16, epsilon=0.1)
        result = train_ecnqr(data, config)
        assert result.log[0].mean_inner_iterations == 0.0

    def test_method_mismatch(self, data):
        with pytest.raises(ValueError):
            train_ecnqr(data, TrainConfig(method=TrainMethod.C_NQR))

    def test_same_seed_is_reproducible(self, data):
        config = TrainConfig(method=TrainMethod.C_NQR, epochs=1, batch_size=20, seed=5)
        a, b = train(data, config), train(data, config)
        for name in a.potential.arrays:
            np.testing.assert_array_equal(a.potential.arrays[name], b.potential.arrays[name])

    def test_non_finite_objective_aborts(self, data, small_potential):
        broken = small_potential.copy()
        broken.arrays["alpha_w"] = np.array([np.nan])
        config = TrainConfig(method=TrainMethod.EC_NQR, epochs=3, batch_size=20, m=8, epsilon=0.1)
        with pytest.raises(TrainingDivergedError) as excinfo:
            Trainer(data, config, broken.config, potential=broken).run()
        assert excinfo.value.epoch == 1
        assert excinfo.value.batch_index == 0
        assert excinfo.value.partial_log == []

    def test_data_shape_checked(self, rng):
        with pytest.raises(ShapeMismatchError):
            Trainer((rng.standard_normal((10, 2)), rng.standard_normal((10, 1))),
                    TrainConfig(), picnn_config=PicnnConfig(d_u=3, d_x=1))


@pytest.mark.slow
class TestReproduction:
    """Longer runs on a Gaussian location family"""

    def test_acnqr_recovers_identity_ranks(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1.0, 1.0, (2000, 1))
        Y = rng.standard_normal((2000, 2)) + X
        config = TrainConfig(method=TrainMethod.AC_NQR, epochs=30, batch_size=256, lr=5e-3)
        model = train((Y, X), config).model()
        U = rng.standard_normal((200, 2))
        x = np.full((200, 1), 0.5)
        Y_hat = model.quantile(U, x).values
        np.testing.assert_allclose(Y_hat.mean(axis=0), [0.5, 0.5], atol=0.2)


def _held_out_objective(potential, Y, X, seed=0):
    """Exact semi-dual estimate on a fixed held-out batch (U-variant, Gaussian reference)"""
    batch = VariantAdapter(Variant.U, ReferenceLaw.GAUSSIAN).split(Y, X, np.random.default_rng(seed))
    solution = solve_conjugate_batch(potential, batch.conjugate_points, batch.X, SolverSettings(max_iter=1000))
    return evaluate_objective(potential, batch, solution.u_hat).value


@pytest.mark.slow
class TestBananaTrainingCurves:
    """Desk-scale training curves on the standardized Banana law"""

    @pytest.fixture(scope="class")
    def banana(self):
        table = gen_banana(3000, seed=0).with_splits((0.8, 0.2), seed=0).standardized()
        train_split, held_out = table.split("train"), table.split("cal")
        return (train_split.Y, train_split.X), (held_out.Y[:256], held_out.X[:256])

    def test_cnqr_epoch_objective_decreases(self, banana):
        result = train_cnqr(banana[0], TrainConfig(method=TrainMethod.C_NQR, epochs=20))
        assert result.log[19].objective < result.log[0].objective

    def test_acnqr_inner_iterations_decrease(self, banana):
        result = train_acnqr(banana[0], TrainConfig(method=TrainMethod.AC_NQR, epochs=20))
        assert result.log[-1].mean_inner_iterations < result.log[0].mean_inner_iterations

    @pytest.mark.parametrize("method", [TrainMethod.C_NQR, TrainMethod.AC_NQR, TrainMethod.EC_NQR])
    def test_held_out_objective_drops_from_initialization(self, banana, method):
        (Y, X), (Y_held, X_held) = banana
        config = PicnnConfig(d_u=2, d_x=1)
        rng = np.random.default_rng(0)
        initial = actnorm_init(PicnnParams.initialize(config, rng), rng.standard_normal((256, 2)), X[:256])
        train_config = TrainConfig(method=method, epochs=20, m=256, epsilon=0.01)
        result = Trainer((Y, X), train_config, config, potential=initial).run()
        before = _held_out_objective(initial, Y_held, X_held)
        after = _held_out_objective(result.potential, Y_held, X_held)
        assert after <= before - 0.2 * abs(before)
