"""Training module for neuralvqr"""

from .loops import TrainingResult, Trainer, train, train_acnqr, train_cnqr, train_ecnqr
from .objectives import entropic_rank, semi_dual_value_and_grad, entropic_value_and_grad
from .optim import CosineSchedule, OptimizerState, adamw_step, clip_gradients

__all__ = [
    "TrainingResult",
    "Trainer",
    "train",
    "train_cnqr",
    "train_acnqr",
    "train_ecnqr",
    "entropic_rank",
    "semi_dual_value_and_grad",
    "entropic_value_and_grad",
    "CosineSchedule",
    "OptimizerState",
    "adamw_step",
    "clip_gradients",
]
