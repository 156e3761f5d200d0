"""Line-delimited caption manifest"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..errors import CorpusError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("path", "caption", "shape", "color", "motion", "tier")


@dataclass
class ClipRecord:
    """One manifest row; factor labels feed the downstream appearance/motion tasks"""
    path: str
    caption: str
    shape: str
    color: str
    motion: str
    tier: str
    kind: str = "video"
    frames: int = 4
    fps: float = 8.0
    clean_caption: Optional[str] = None
    segment_captions: List[str] = field(default_factory=list)
    segment_motions: List[str] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.frames / self.fps if self.fps else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClipRecord":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def write_manifest(path: Union[str, Path], records: List[ClipRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    logger.info(f"Wrote manifest with {len(records)} clips to {path}")


def read_manifest(path: Union[str, Path]) -> List[ClipRecord]:
    """Parse a manifest; malformed rows raise ``CorpusError`` with their 1-based line number"""
    records: List[ClipRecord] = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except FileNotFoundError as exc:
        raise CorpusError(f"manifest not found: {path}") from exc
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc.msg}", line=line_no) from exc
            if not isinstance(row, dict):
                raise CorpusError("row is not an object", line=line_no)
            missing = [name for name in REQUIRED_FIELDS if name not in row]
            if missing:
                raise CorpusError(f"missing fields {', '.join(missing)}", line=line_no)
            try:
                records.append(ClipRecord.from_dict(row))
            except (TypeError, ValueError) as exc:
                raise CorpusError(str(exc), line=line_no) from exc
    return records
