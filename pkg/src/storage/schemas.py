"""Data schemas for run storage."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class RunStatus(str, Enum):
    """Status of a run."""
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"


class Regime(str, Enum):
    """How the encoder was used when a metric was measured."""
    PRETRAIN = "pretrain"
    ZERO_SHOT = "zero-shot"
    FROZEN = "frozen"
    MLAP = "mlap"
    LORA = "lora"
    FINETUNE = "finetune"


@dataclass
class RunMetadata:
    """Metadata for one CLI invocation."""
    run_id: str
    command: str
    seed: int
    created_at: str  # ISO 8601 format
    status: RunStatus
    parameters: Dict[str, Any]
    stages_completed: List[str] = field(default_factory=list)
    stages_failed: List[str] = field(default_factory=list)
    completed_at: Optional[str] = None
    error_message: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        return {
            "run_id": self.run_id,
            "command": self.command,
            "seed": self.seed,
            "created_at": self.created_at,
            "status": self.status.value,
            "parameters": self.parameters,
            "stages_completed": self.stages_completed,
            "stages_failed": self.stages_failed,
            "completed_at": self.completed_at,
            "error_message": self.error_message,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunMetadata":
        """Create from dictionary."""
        return cls(
            run_id=data["run_id"],
            command=data["command"],
            seed=int(data["seed"]),
            created_at=data["created_at"],
            status=RunStatus(data["status"]),
            parameters=data.get("parameters", {}),
            stages_completed=data.get("stages_completed", []),
            stages_failed=data.get("stages_failed", []),
            completed_at=data.get("completed_at"),
            error_message=data.get("error_message"),
        )


@dataclass
class MetricRecord:
    """One measured value; serialized as a single sorted-key JSON line."""
    task: str
    regime: str
    metric: str
    value: float
    seed: int
    step: int = 0
    tags: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        row = {
            "task": self.task,
            "regime": self.regime,
            "metric": self.metric,
            "value": float(self.value),
            "seed": int(self.seed),
            "step": int(self.step),
        }
        if self.tags:
            row["tags"] = dict(self.tags)
        return row

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricRecord":
        return cls(
            task=data["task"],
            regime=data["regime"],
            metric=data["metric"],
            value=float(data["value"]),
            seed=int(data["seed"]),
            step=int(data.get("step", 0)),
            tags=data.get("tags", {}),
        )
