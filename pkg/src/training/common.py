"""Pieces shared by every training loop: optimizer setup, stepping and divergence checks"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from ..autograd.optim import OptimizerState, adamw_step
from ..autograd.schedule import LrSchedule, lr_at
from ..autograd.tensor import Tensor
from ..config import OptimConfig
from ..errors import TrainingDivergedError
from ..model.params import Parameter

logger = logging.getLogger(__name__)
events = structlog.get_logger(__name__)

# Tables that act as embeddings are excluded from weight decay like biases and norms
NO_DECAY_SUFFIXES = ("token_emb", "pos_emb", "spatial", "temporal", "mask_emb", "query", "log_tau")


def no_decay_names(params: Dict[str, Parameter]) -> Tuple[str, ...]:
    return tuple(
        name for name, param in params.items()
        if param.ndim < 2 or name.rsplit(".", 1)[-1] in NO_DECAY_SUFFIXES
    )


def make_optimizer(cfg: OptimConfig, params: Dict[str, Parameter]) -> OptimizerState:
    return OptimizerState(
        base_lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        grad_clip_norm=cfg.grad_clip_norm,
        no_decay=no_decay_names(params),
    )


def make_schedule(cfg: OptimConfig, total_steps: int) -> LrSchedule:
    """Warmup is capped at the run length so short runs still validate"""
    return LrSchedule(
        kind=cfg.schedule,
        base_lr=cfg.lr,
        warmup_steps=min(cfg.warmup_steps, total_steps),
        total_steps=total_steps,
        floor_lr=min(cfg.floor_lr, cfg.lr),
    )


def check_finite(loss: Tensor, step: int, stage: str, corpus: Optional[str] = None) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        logger.error(f"{stage} loss became {value} at step {step}")
        raise TrainingDivergedError(step, corpus, stage)
    return value


def optimizer_step(
    loss: Tensor,
    params: Dict[str, Parameter],
    state: OptimizerState,
    schedule: LrSchedule,
    step: int,
) -> float:
    """Backpropagate ``loss`` into ``params`` and apply one AdamW update

    Returns:
        Learning rate used
    """
    for param in params.values():
        param.grad = None
    loss.backward()
    lr = lr_at(schedule, step)
    adamw_step(params, state, lr)
    return lr


@dataclass
class StepResult:
    step: int
    loss: float
    lr: float
    corpus: Optional[str] = None
    parts: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        row = {"step": self.step, "loss": self.loss, "lr": self.lr}
        if self.corpus:
            row["corpus"] = self.corpus
        row.update(self.parts)
        return row


def log_step(stage: str, result: StepResult, every: int = 50) -> None:
    if result.step % every == 0:
        events.info(f"{stage}_step", **result.to_dict())


@dataclass
class TrainHistory:
    """Per-step losses plus evaluation snapshots"""
    steps: List[StepResult] = field(default_factory=list)
    evals: List[Dict[str, float]] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [s.loss for s in self.steps]
