"""Storage module: run directories, metric records and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .run_storage import RunStorage
from .schemas import MetricRecord, Regime, RunMetadata, RunStatus

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "RunStorage",
    "MetricRecord",
    "Regime",
    "RunMetadata",
    "RunStatus",
]
