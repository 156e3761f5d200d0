"""Zero-shot video-text retrieval

Both directions are read off one similarity matrix. A query's rank counts
the gallery items scoring strictly higher than its match, plus the
equal-scoring items with a lower index (ties go to the lowest index).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..autograd.tensor import Tensor
from ..corpus.dataset import Corpus
from ..errors import CorpusError, ShapeError
from ..storage.schemas import MetricRecord
from ..training.contrastive import DualEncoder
from .features import embed_texts, embed_videos

logger = logging.getLogger(__name__)

RECALL_KS = (1, 5)


@dataclass
class RetrievalResult:
    text_to_video: Dict[int, float]
    video_to_text: Dict[int, float]
    gallery_size: int

    def metrics(self) -> Dict[str, float]:
        out = {f"t2v_r@{k}": v for k, v in self.text_to_video.items()}
        out.update({f"v2t_r@{k}": v for k, v in self.video_to_text.items()})
        return out

    def to_records(self, task: str, regime: str, seed: int, step: int = 0) -> List[MetricRecord]:
        return [
            MetricRecord(task, regime, name, value, seed, step, {"gallery_size": self.gallery_size})
            for name, value in sorted(self.metrics().items())
        ]


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def match_ranks(similarity: np.ndarray) -> np.ndarray:
    """0-based rank of column ``i`` in row ``i``"""
    n = similarity.shape[0]
    diagonal = similarity[np.arange(n), np.arange(n)][:, None]
    higher = (similarity > diagonal).sum(axis=1)
    lower_index = np.tril(np.ones((n, n), dtype=bool), k=-1)
    tied_before = ((similarity == diagonal) & lower_index).sum(axis=1)
    return higher + tied_before


def recall_at(ranks: np.ndarray, ks: Sequence[int] = RECALL_KS) -> Dict[int, float]:
    return {k: float((ranks < k).mean()) for k in ks}


def retrieval_eval(video, text, ks: Sequence[int] = RECALL_KS) -> RetrievalResult:
    """Recall@k for paired [N, D] embeddings (row ``i`` of each side matches)"""
    video, text = _as_array(video), _as_array(text)
    if video.ndim != 2 or video.shape != text.shape:
        raise ShapeError("retrieval_eval", [video.shape, text.shape], "need paired [N, D] embeddings")
    if video.shape[0] == 0:
        raise ShapeError("retrieval_eval", [video.shape], "empty gallery")
    similarity = video @ text.T
    return RetrievalResult(
        text_to_video=recall_at(match_ranks(similarity.T), ks),
        video_to_text=recall_at(match_ranks(similarity), ks),
        gallery_size=video.shape[0],
    )


def gallery_retrieval(video: np.ndarray, text: np.ndarray, gallery_size: int) -> RetrievalResult:
    """Mean recall over consecutive galleries of ``gallery_size`` pairs

    A trailing partial gallery is dropped unless it is the only one.
    """
    n = len(video)
    size = min(gallery_size, n)
    starts = range(0, max(n - size, 0) + 1, size) if size else []
    results = [retrieval_eval(video[s: s + size], text[s: s + size]) for s in starts]
    if not results:
        raise ShapeError("gallery_retrieval", [video.shape], "empty gallery")
    return RetrievalResult(
        text_to_video={k: float(np.mean([r.text_to_video[k] for r in results])) for k in RECALL_KS},
        video_to_text={k: float(np.mean([r.video_to_text[k] for r in results])) for k in RECALL_KS},
        gallery_size=size,
    )


def evaluate_retrieval(model: DualEncoder, corpus: Corpus, gallery_size: int = 32, batch_size: int = 32) -> RetrievalResult:
    video = embed_videos(model, corpus, batch_size)
    text = embed_texts(model, corpus.captions)
    result = gallery_retrieval(video, text, gallery_size)
    logger.info(f"Retrieval on '{corpus.name}' (gallery {result.gallery_size}): {result.metrics()}")
    return result


def segment_retrieval_eval(model: DualEncoder, corpus: Corpus, batch_size: int = 32) -> float:
    """Multi-choice segment retrieval over multi-segment clips

    Every clip is cut into its segments; each segment must pick its own
    caption among the captions of all segments of the same clip.
    """
    records = corpus.records
    if not records or not all(r.segment_captions for r in records):
        raise CorpusError(f"corpus '{corpus.name}' has no multi-segment clips")
    segments = len(records[0].segment_captions)
    total_frames = corpus.frames.shape[1]
    if total_frames % segments:
        raise CorpusError(f"{total_frames} frames do not split into {segments} segments")
    per_segment = total_frames // segments

    hits, count = 0, 0
    for batch in corpus.iter_batches(batch_size):
        b = len(batch)
        pieces = batch.pixels.reshape((b * segments, per_segment) + batch.pixels.shape[2:])
        piece_corpus = Corpus(f"{corpus.name}-segments", pieces, [r for r in batch.records for _ in range(segments)])
        video = embed_videos(model, piece_corpus, batch_size * segments).reshape(b, segments, -1)
        text = embed_texts(model, [c for r in batch.records for c in r.segment_captions]).reshape(b, segments, -1)
        for i in range(b):
            ranks = match_ranks(video[i] @ text[i].T)
            hits += int((ranks == 0).sum())
            count += segments
    accuracy = hits / count
    logger.info(f"Segment retrieval on '{corpus.name}': {accuracy:.3f} over {count} segments")
    return accuracy
