"""Learning-rate schedules: linear warmup followed by linear or cosine decay"""

import math
from dataclasses import dataclass
from enum import Enum

from ..errors import ConfigError


class ScheduleKind(str, Enum):
    """Decay shape after warmup"""
    LINEAR = "linear"
    COSINE = "cosine"


@dataclass(frozen=True)
class LrSchedule:
    """Warmup-then-decay schedule

    lr rises linearly from 0 to ``base_lr`` over ``warmup_steps`` and then
    decays to ``floor_lr`` at ``total_steps``. Steps past the end stay at the floor.
    """
    kind: ScheduleKind
    base_lr: float
    warmup_steps: int
    total_steps: int
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.base_lr < 0 or self.floor_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.warmup_steps < 0 or self.total_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup_steps ({self.warmup_steps}) exceeds total_steps ({self.total_steps})"
            )
        object.__setattr__(self, "kind", ScheduleKind(self.kind))


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at ``step`` (clamped to the floor past ``total_steps``)"""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if step >= schedule.total_steps and schedule.total_steps > schedule.warmup_steps:
        return schedule.floor_lr
    if schedule.warmup_steps > 0 and step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    if step >= schedule.total_steps:
        # warmup == total: warmup ends exactly at the last step
        return schedule.base_lr if step == schedule.total_steps else schedule.floor_lr

    span = schedule.total_steps - schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / span
    amplitude = schedule.base_lr - schedule.floor_lr
    if schedule.kind == ScheduleKind.LINEAR:
        return schedule.floor_lr + amplitude * (1.0 - progress)
    return schedule.floor_lr + amplitude * (1.0 + math.cos(math.pi * progress)) / 2.0
