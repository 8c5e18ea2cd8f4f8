"""
Training loops: C-NQR, AC-NQR and EC-NQR
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from ..autodiff import as_dense
from ..engine.amortizer import AmortizerParams, amortizer_loss_and_grad, amortizer_predict
from ..engine.conjugate import solve_conjugate_batch
from ..engine.model import QuantileModel
from ..engine.picnn import PicnnParams, actnorm_init
from ..metrics.prometheus import epoch_duration, training_aborts_total, training_steps_total
from ..types.errors import ShapeMismatchError, TrainingDivergedError
from ..types.models import (
    EpochRecord,
    PicnnConfig,
    SolverInit,
    SolverSettings,
    TrainConfig,
    TrainMethod,
)
from .objectives import (
    VariantAdapter,
    draw_entropic_samples,
    entropic_value_and_grad,
    gradients_finite,
    semi_dual_value_and_grad,
)
from .optim import CosineSchedule, OptimizerState, adamw_step, clip_gradients

logger = logging.getLogger(__name__)


@dataclass
class TrainingResult:
    """Trained parameters and the per-epoch log"""
    potential: PicnnParams
    amortizer: Optional[AmortizerParams]
    config: TrainConfig
    log: List[EpochRecord] = field(default_factory=list)

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.log])

    def model(self, settings: Optional[SolverSettings] = None) -> QuantileModel:
        return QuantileModel(self.potential, self.config.variant, self.config.reference,
                             settings=settings, amortizer=self.amortizer)

    def median_epoch_ms(self) -> float:
        return float(np.median([r.wall_ms for r in self.log])) if self.log else 0.0


def _unpack(data) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        Y, X = data
    else:
        Y, X = data.Y, data.X
    Y = as_dense(Y)
    X = np.zeros((Y.shape[0], 0)) if X is None else as_dense(X).reshape(Y.shape[0], -1)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ShapeMismatchError(f"training data: Y has shape {Y.shape}, expected a nonempty (n, d_y) table")
    return Y, X


class Trainer:
    """Shared mini-batch loop; the method decides how the conjugate term is formed"""

    def __init__(self, data, config: TrainConfig, picnn_config: Optional[PicnnConfig] = None,
                 solver: Optional[SolverSettings] = None, potential: Optional[PicnnParams] = None):
        self.Y, self.X = _unpack(data)
        self.config = config
        n, d_y = self.Y.shape
        self.picnn_config = picnn_config or PicnnConfig(d_u=d_y, d_x=self.X.shape[1])
        if self.picnn_config.d_u != d_y or self.picnn_config.d_x != self.X.shape[1]:
            raise ShapeMismatchError(
                f"potential config ({self.picnn_config.d_u}, {self.picnn_config.d_x}) "
                f"does not match data ({d_y}, {self.X.shape[1]})"
            )

        self.rng = np.random.default_rng(config.seed)
        self.potential = potential or PicnnParams.initialize(self.picnn_config, self.rng)
        self.amortizer = None
        if config.method == TrainMethod.AC_NQR:
            self.amortizer = AmortizerParams.initialize(self.picnn_config, self.rng)

        base = solver or SolverSettings()
        self.solver = base.model_copy(update={
            "max_iter": config.resolved_inner_max_iter(),
            "workers": config.workers or base.workers,
        })
        self.adapter = VariantAdapter(config.variant, config.reference)
        self.batches_per_epoch = -(-n // config.batch_size)
        total = self.batches_per_epoch * config.epochs
        self.schedule = CosineSchedule(config.lr, total)
        self.amortizer_schedule = CosineSchedule(
            config.lr if config.amortizer_lr is None else config.amortizer_lr,
            total, restart_period=config.restart_period_steps,
        )
        self.opt = OptimizerState.for_params(self.potential.arrays)
        self.amortizer_opt = OptimizerState.for_params(self.amortizer.arrays) if self.amortizer else None
        self.step = 0
        self.log: List[EpochRecord] = []

    def _conjugate_init(self, batch) -> Optional[np.ndarray]:
        if self.amortizer is not None:
            return amortizer_predict(self.amortizer, batch.conjugate_points, batch.X)
        if self.solver.init == SolverInit.REFERENCE:
            return None
        return np.zeros_like(batch.conjugate_points)

    def _exact_step(self, batch):
        init = self._conjugate_init(batch)
        solution = solve_conjugate_batch(
            self.potential, batch.conjugate_points, batch.X, self.solver,
            init=init, domain=self.adapter.solve_domain, rng=self.rng,
        )
        estimate, grads = semi_dual_value_and_grad(self.potential, batch, solution.u_hat)
        return estimate, grads, solution

    def _amortizer_step(self, batch, targets: np.ndarray) -> None:
        # targets come from the potential of this same step
        _, grads = amortizer_loss_and_grad(
            self.amortizer, batch.conjugate_points, batch.X, targets,
            loss=self.config.amortizer_loss, potential=self.potential,
        )
        grads, _ = clip_gradients(grads, self.config.clip_norm)
        self.amortizer_opt, arrays = adamw_step(
            self.amortizer_opt, self.amortizer.arrays, grads,
            self.amortizer_schedule.lr(self.step), self.config.weight_decay,
        )
        self.amortizer = self.amortizer.replace(arrays)

    def _abort(self, epoch: int, batch_index: int, what: str):
        training_aborts_total.labels(method=self.config.method.value).inc()
        logger.error(f"{self.config.method.value}: {what} at epoch {epoch}, batch {batch_index}; aborting")
        raise TrainingDivergedError(
            f"{what} at epoch {epoch}, batch {batch_index}", batch_index=batch_index,
            epoch=epoch, partial_log=list(self.log),
        )

    def run(self) -> TrainingResult:
        config = self.config
        method = config.method.value
        n = self.Y.shape[0]
        logger.info(
            f"{method}: training {config.variant.value}-variant on n={n}, d_y={self.Y.shape[1]}, "
            f"d_x={self.X.shape[1]} for {config.epochs} epochs (batch {config.batch_size})"
        )
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = self.rng.permutation(n)
            values, pot_terms, conj_terms, iterations = [], [], [], []
            non_converged = 0

            for b in range(self.batches_per_epoch):
                idx = order[b * config.batch_size:(b + 1) * config.batch_size]
                batch = self.adapter.split(self.Y[idx], self.X[idx], self.rng)
                if not self.potential.actnorm_initialized:
                    self.potential = actnorm_init(self.potential, batch.potential_points, batch.X)
                    self.opt = OptimizerState.for_params(self.potential.arrays)

                if config.method == TrainMethod.EC_NQR:
                    samples = draw_entropic_samples(
                        config.reference, self.rng, len(idx), config.m, self.Y.shape[1]
                    )
                    estimate, grads = entropic_value_and_grad(
                        self.potential, batch, samples, config.epsilon, config.entropic_chunk
                    )
                else:
                    estimate, grads, solution = self._exact_step(batch)
                    iterations.append(float(solution.iterations.mean()))
                    non_converged += int(np.sum(~solution.converged))

                if not np.isfinite(estimate.value):
                    self._abort(epoch, b, "NaN objective")
                if not gradients_finite(grads):
                    self._abort(epoch, b, "non-finite gradient")

                if self.amortizer is not None:
                    self._amortizer_step(batch, solution.u_hat)

                grads, _ = clip_gradients(grads, config.clip_norm)
                self.opt, arrays = adamw_step(
                    self.opt, self.potential.arrays, grads, self.schedule.lr(self.step), config.weight_decay
                )
                self.potential = self.potential.replace(arrays)
                self.step += 1
                training_steps_total.labels(method=method).inc()

                values.append(estimate.value)
                pot_terms.append(estimate.potential_term)
                conj_terms.append(estimate.conjugate_term)
                logger.debug(f"{method}: epoch {epoch} batch {b} objective {estimate.value:.6f}")

            elapsed = time.perf_counter() - started
            epoch_duration.observe(elapsed)
            record = EpochRecord(
                epoch=epoch,
                objective=float(np.mean(values)),
                potential_term=float(np.mean(pot_terms)),
                conjugate_term=float(np.mean(conj_terms)),
                mean_inner_iterations=float(np.mean(iterations)) if iterations else 0.0,
                non_converged=non_converged,
                wall_ms=elapsed * 1000.0,
            )
            self.log.append(record)
            logger.info(
                f"{method}: epoch {epoch}/{config.epochs} objective {record.objective:.6f} "
                f"(potential {record.potential_term:.6f}, conjugate {record.conjugate_term:.6f}), "
                f"inner iterations {record.mean_inner_iterations:.1f}, {record.wall_ms:.0f} ms"
            )
            if non_converged:
                logger.warning(f"{method}: epoch {epoch} had {non_converged} non-converged conjugate solves")

        return TrainingResult(self.potential, self.amortizer, config, self.log)


def _require(config: TrainConfig, method: TrainMethod) -> None:
    if config.method != method:
        raise ValueError(f"expected method {method.value}, config has {config.method.value}")


def train_cnqr(data, config: TrainConfig, picnn_config: Optional[PicnnConfig] = None,
               solver: Optional[SolverSettings] = None) -> TrainingResult:
    """Exact conjugates from u = 0 each step, Danskin gradient"""
    _require(config, TrainMethod.C_NQR)
    return Trainer(data, config, picnn_config, solver).run()


def train_acnqr(data, config: TrainConfig, picnn_config: Optional[PicnnConfig] = None,
                solver: Optional[SolverSettings] = None) -> TrainingResult:
    """Amortizer warm starts; the amortizer regresses onto each step's exact conjugates"""
    _require(config, TrainMethod.AC_NQR)
    return Trainer(data, config, picnn_config, solver).run()


def train_ecnqr(data, config: TrainConfig, picnn_config: Optional[PicnnConfig] = None,
                solver: Optional[SolverSettings] = None) -> TrainingResult:
    """Entropic semi-dual with Monte Carlo soft conjugates"""
    _require(config, TrainMethod.EC_NQR)
    return Trainer(data, config, picnn_config, solver).run()


def train(data, config: TrainConfig, picnn_config: Optional[PicnnConfig] = None,
          solver: Optional[SolverSettings] = None) -> TrainingResult:
    return Trainer(data, config, picnn_config, solver).run()
