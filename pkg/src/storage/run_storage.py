"""JSON-based storage for runs: metadata, metric records, checkpoints and reports."""

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional

from .schemas import MetricRecord, RunMetadata, RunStatus


class RunStorage:
    """Handles file storage for one output directory of runs.

    Layout per run::

        <base_dir>/<run_id>/run_metadata.json
        <base_dir>/<run_id>/metrics.jsonl
        <base_dir>/<run_id>/checkpoints/
        <base_dir>/<run_id>/reports/
    """

    def __init__(self, base_dir: str = "./runs"):
        """Initialize run storage.

        Args:
            base_dir: Base directory for all runs
        """
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)

    def get_run_dir(self, run_id: str) -> Path:
        run_dir = self.base_dir / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        return run_dir

    def get_checkpoints_dir(self, run_id: str) -> Path:
        checkpoints_dir = self.get_run_dir(run_id) / "checkpoints"
        checkpoints_dir.mkdir(parents=True, exist_ok=True)
        return checkpoints_dir

    def get_reports_dir(self, run_id: str) -> Path:
        reports_dir = self.get_run_dir(run_id) / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        return reports_dir

    def checkpoint_path(self, run_id: str, name: str) -> Path:
        """Path for checkpoint ``name`` (``.ckpt`` appended when missing)"""
        if not name.endswith(".ckpt"):
            name += ".ckpt"
        return self.get_checkpoints_dir(run_id) / name

    # Run Metadata Management

    def start_run(self, run_id: str, command: str, seed: int, parameters: dict) -> RunMetadata:
        """Create fresh metadata for a run and start a new metric log.

        Args:
            run_id: Unique run identifier
            command: CLI subcommand that owns the run
            seed: Run seed
            parameters: Config snapshot

        Returns:
            The saved metadata
        """
        metadata = RunMetadata(
            run_id=run_id,
            command=command,
            seed=seed,
            created_at=datetime.now(timezone.utc).isoformat(),
            status=RunStatus.IN_PROGRESS,
            parameters=parameters,
        )
        self.save_run_metadata(metadata)
        metrics_path = self.get_run_dir(run_id) / "metrics.jsonl"
        if metrics_path.exists():
            metrics_path.unlink()
        return metadata

    def save_run_metadata(self, metadata: RunMetadata) -> None:
        run_dir = self.get_run_dir(metadata.run_id)
        metadata_path = run_dir / "run_metadata.json"

        with open(metadata_path, 'w') as f:
            json.dump(metadata.to_dict(), f, indent=2)

    def load_run_metadata(self, run_id: str) -> Optional[RunMetadata]:
        """Load run metadata.

        Args:
            run_id: Unique run identifier

        Returns:
            Run metadata or None if not found
        """
        metadata_path = self.base_dir / run_id / "run_metadata.json"

        if not metadata_path.exists():
            return None

        with open(metadata_path, 'r') as f:
            data = json.load(f)
            return RunMetadata.from_dict(data)

    def update_run_status(
        self,
        run_id: str,
        status: RunStatus,
        error_message: Optional[str] = None
    ) -> None:
        """Update run status.

        Args:
            run_id: Unique run identifier
            status: New status
            error_message: Optional error message if failed
        """
        metadata = self.load_run_metadata(run_id)
        if metadata:
            metadata.status = status
            if status == RunStatus.COMPLETED or status == RunStatus.FAILED:
                metadata.completed_at = datetime.now(timezone.utc).isoformat()
            if error_message:
                metadata.error_message = error_message
            self.save_run_metadata(metadata)

    def add_completed_stage(self, run_id: str, stage: str) -> None:
        metadata = self.load_run_metadata(run_id)
        if metadata and stage not in metadata.stages_completed:
            metadata.stages_completed.append(stage)
            self.save_run_metadata(metadata)

    def add_failed_stage(self, run_id: str, stage: str) -> None:
        metadata = self.load_run_metadata(run_id)
        if metadata and stage not in metadata.stages_failed:
            metadata.stages_failed.append(stage)
            self.save_run_metadata(metadata)

    # Metric Records

    def append_metrics(self, run_id: str, records: Iterable[MetricRecord]) -> None:
        """Append metric records as sorted-key JSON lines (no timestamps)."""
        metrics_path = self.get_run_dir(run_id) / "metrics.jsonl"
        with open(metrics_path, 'a', encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def load_metrics(self, run_id: str) -> List[MetricRecord]:
        metrics_path = self.base_dir / run_id / "metrics.jsonl"
        if not metrics_path.exists():
            return []
        with open(metrics_path, 'r', encoding="utf-8") as f:
            return [MetricRecord.from_dict(json.loads(line)) for line in f if line.strip()]

    # Reports

    def save_report(self, run_id: str, name: str, content: str) -> Path:
        report_path = self.get_reports_dir(run_id) / name
        with open(report_path, 'w', encoding="utf-8") as f:
            f.write(content)
        return report_path

    def list_runs(
        self,
        status: Optional[RunStatus] = None,
        limit: Optional[int] = None
    ) -> List[RunMetadata]:
        """List runs, newest first.

        Args:
            status: Optional status filter
            limit: Maximum number of runs to return
        """
        runs = []

        for run_dir in self.base_dir.iterdir():
            if run_dir.is_dir():
                metadata = self.load_run_metadata(run_dir.name)
                if metadata and (status is None or metadata.status == status):
                    runs.append(metadata)

        runs.sort(key=lambda r: r.created_at, reverse=True)

        if limit:
            runs = runs[:limit]

        return runs

    def run_exists(self, run_id: str) -> bool:
        return self.load_run_metadata(run_id) is not None
