"""Corpus statistics: duration, caption-length and alignment histograms"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import CorpusError
from ..model.text import tokenize
from .manifest import ClipRecord

logger = logging.getLogger(__name__)

AlignmentScorer = Callable[[Sequence[ClipRecord]], np.ndarray]


@dataclass
class Histogram:
    """Binned counts; ``edges`` has one more entry than ``counts``"""
    name: str
    edges: List[float]
    counts: List[int]
    mean: float

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def to_records(self, corpus: str) -> List[Dict[str, Any]]:
        return [
            {
                "corpus": corpus,
                "histogram": self.name,
                "bin_low": self.edges[i],
                "bin_high": self.edges[i + 1],
                "count": self.counts[i],
            }
            for i in range(len(self.counts))
        ]


def histogram(name: str, values: Sequence[float], bins: int = 10) -> Histogram:
    """Equal-width histogram; constant values collapse to a single bin"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return Histogram(name, [0.0, 0.0], [0], 0.0)
    low, high = float(values.min()), float(values.max())
    if low == high:
        return Histogram(name, [low, high], [int(values.size)], low)
    counts, edges = np.histogram(values, bins=bins, range=(low, high))
    return Histogram(name, [float(e) for e in edges], [int(c) for c in counts], float(values.mean()))


@dataclass
class CorpusStats:
    corpus: str
    clips: int
    duration: Histogram
    caption_length: Histogram
    alignment: Optional[Histogram] = None

    @property
    def histograms(self) -> List[Histogram]:
        return [h for h in (self.duration, self.caption_length, self.alignment) if h is not None]

    def to_records(self) -> List[Dict[str, Any]]:
        rows: List[Dict[str, Any]] = []
        for hist in self.histograms:
            rows.extend(hist.to_records(self.corpus))
        return rows


def corpus_stats(
    records: Sequence[ClipRecord],
    corpus: str = "corpus",
    scorer: Optional[AlignmentScorer] = None,
    bins: int = 10,
) -> CorpusStats:
    """Histograms over a manifest

    Args:
        records: Manifest rows
        corpus: Name used in emitted records
        scorer: Optional callable returning one video-caption alignment score
            per record (e.g. similarity under a tuned text tower)
        bins: Bin count for non-constant distributions
    """
    durations = [r.duration for r in records]
    lengths = [len(tokenize(r.caption)) for r in records]
    alignment = None
    if scorer is not None and records:
        scores = np.asarray(scorer(records), dtype=np.float64)
        if scores.shape != (len(records),):
            raise CorpusError(f"alignment scorer returned shape {scores.shape} for {len(records)} clips")
        alignment = histogram("alignment", scores, bins)
    stats = CorpusStats(
        corpus=corpus,
        clips=len(records),
        duration=histogram("duration", durations, bins),
        caption_length=histogram("caption_length", lengths, bins),
        alignment=alignment,
    )
    logger.info(f"Computed stats for {corpus}: {len(records)} clips")
    return stats
