"""In-memory corpus handles with deterministic batching"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import CorpusConfig
from ..errors import CorpusError
from ..rng import derive_rng
from .clip_io import read_clip
from .manifest import ClipRecord, read_manifest
from .synthetic import factor_labels, generate_clips

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """One homogeneous mini-batch drawn from a single corpus"""
    corpus: str
    pixels: np.ndarray
    records: List[ClipRecord]
    indices: np.ndarray

    def __post_init__(self):
        kinds = {r.kind for r in self.records}
        if len(kinds) > 1:
            raise CorpusError(f"batch from '{self.corpus}' mixes media kinds: {sorted(kinds)}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def captions(self) -> List[str]:
        return [r.caption for r in self.records]

    @property
    def kind(self) -> str:
        return self.records[0].kind if self.records else "video"

    @property
    def is_image(self) -> bool:
        return self.pixels.shape[1] == 1


class Corpus:
    """Named clip collection: uint8 frames [N, T, H, W, 3] plus manifest records

    Batches are drawn epoch by epoch: each epoch is a permutation of the corpus
    derived from ``(seed, name, epoch)``, cut into ``N // batch_size`` batches
    (the remainder is dropped so no clip repeats within a batch).
    """

    def __init__(self, name: str, frames: np.ndarray, records: Sequence[ClipRecord], tier: Optional[str] = None):
        if len(frames) != len(records):
            raise CorpusError(f"corpus '{name}': {len(frames)} clips but {len(records)} records")
        self.name = name
        self.frames = frames
        self.records = list(records)
        self.tier = tier or (self.records[0].tier if self.records else "clean")

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"Corpus(name={self.name!r}, size={len(self)}, tier={self.tier!r}, kind={self.kind!r})"

    @property
    def kind(self) -> str:
        return "image" if self.frames.ndim == 5 and self.frames.shape[1] == 1 else "video"

    @property
    def captions(self) -> List[str]:
        return [r.caption for r in self.records]

    @classmethod
    def from_manifest(cls, manifest: Union[str, Path], name: Optional[str] = None) -> "Corpus":
        manifest = Path(manifest)
        records = read_manifest(manifest)
        clips = [read_clip(manifest.parent / r.path) for r in records]
        if clips:
            shapes = {c.frames.shape for c in clips}
            if len(shapes) > 1:
                raise CorpusError(f"{manifest}: clips have differing shapes {sorted(shapes)}")
            frames = np.stack([c.frames for c in clips])
        else:
            frames = np.zeros((0, 1, 1, 1, 3), dtype=np.uint8)
        corpus = cls(name or manifest.parent.name, frames, records)
        logger.info(f"Loaded {corpus}")
        return corpus

    @classmethod
    def from_spec(cls, spec: CorpusConfig, seed: int, name: Optional[str] = None) -> "Corpus":
        frames, records = generate_clips(spec, seed)
        return cls(name or f"{spec.tier}-{spec.kind}", frames, records, tier=spec.tier)

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Corpus":
        indices = np.asarray(indices, dtype=np.int64)
        return Corpus(name or self.name, self.frames[indices], [self.records[i] for i in indices], self.tier)

    def split(self, holdout: int) -> Tuple["Corpus", "Corpus"]:
        """(train, held-out); the last ``holdout`` clips are held out"""
        if holdout < 0 or holdout > len(self):
            raise CorpusError(f"cannot hold out {holdout} of {len(self)} clips")
        cut = len(self) - holdout
        return (
            self.subset(range(cut), self.name),
            self.subset(range(cut, len(self)), f"{self.name}-holdout"),
        )

    def labels(self, factor: str) -> Tuple[np.ndarray, List[str]]:
        return factor_labels(self.records, factor)

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        return _epoch_order(len(self), seed, self.name, epoch)

    def batches_per_epoch(self, batch_size: int) -> int:
        return max(1, len(self) // max(1, min(batch_size, len(self))))

    def batch(self, draw: int, batch_size: int, seed: int) -> Batch:
        """The ``draw``-th batch of this corpus; a pure function of (draw, seed, name, size)"""
        if not len(self):
            raise CorpusError(f"corpus '{self.name}' is empty")
        size = min(batch_size, len(self))
        epoch, slot = divmod(draw, self.batches_per_epoch(size))
        indices = self.epoch_order(seed, epoch)[slot * size: (slot + 1) * size]
        return self.take(indices)

    def take(self, indices: Sequence[int]) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        return Batch(self.name, self.frames[indices], [self.records[i] for i in indices], indices)

    def iter_batches(self, batch_size: int):
        """Sequential, unshuffled batches for evaluation"""
        for start in range(0, len(self), batch_size):
            yield self.take(np.arange(start, min(start + batch_size, len(self))))


@lru_cache(maxsize=64)
def _epoch_order(size: int, seed: int, name: str, epoch: int) -> np.ndarray:
    order = derive_rng(seed, "epoch", name, epoch).permutation(size)
    order.setflags(write=False)
    return order
