"""Numeric substrate: tensors, reverse-mode autodiff, AdamW and LR schedules"""

from . import ops
from .gradcheck import GradCheckResult, check_gradients
from .graph import ComputeGraph, backward, forward
from .optim import OptimizerState, adamw_step, clip_grad_norm, zero_grad
from .schedule import LrSchedule, ScheduleKind, lr_at
from .tensor import Tensor, as_tensor, default_dtype, no_grad, precision

__all__ = [
    "ops",
    "GradCheckResult",
    "check_gradients",
    "ComputeGraph",
    "backward",
    "forward",
    "OptimizerState",
    "adamw_step",
    "clip_grad_norm",
    "zero_grad",
    "LrSchedule",
    "ScheduleKind",
    "lr_at",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "no_grad",
    "precision",
]
