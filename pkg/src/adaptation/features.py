"""Cached encoder outputs for frozen-backbone regimes

A frozen encoder's tokens do not change during head training, so they are
computed once per corpus and indexed by clip.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor, no_grad
from ..corpus.dataset import Corpus
from ..errors import CorpusError
from ..model.encoder import VideoEncoder
from ..rng import derive_rng
from ..training.contrastive import DualEncoder

logger = logging.getLogger(__name__)


def merge_tap(tap: Tensor) -> Tensor:
    """[B, T, S, D] block output -> [B, T*S, D]"""
    b, t, s, d = tap.shape
    return ops.reshape(tap, (b, t * s, d))


def forward_features(
    encoder: VideoEncoder,
    pixels: np.ndarray,
    tap_layers: Sequence[int] = (),
    interpolate: bool = True,
) -> Tuple[Tensor, List[Tensor]]:
    """Final tokens [B, L, D] and the requested block outputs, each [B, L, D]"""
    out = encoder(pixels, interpolate=interpolate, return_taps=bool(tap_layers))
    return out.tokens(), [merge_tap(out.taps[i]) for i in tap_layers]


@dataclass
class FeatureSet:
    tokens: np.ndarray
    taps: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    def take(self, indices: np.ndarray) -> Tuple[Tensor, List[Tensor]]:
        indices = np.asarray(indices, dtype=np.int64)
        return Tensor(self.tokens[indices]), [Tensor(tap[indices]) for tap in self.taps]


def encode_corpus(
    encoder: VideoEncoder,
    corpus: Corpus,
    batch_size: int = 32,
    tap_layers: Sequence[int] = (),
    interpolate: bool = True,
) -> FeatureSet:
    if not len(corpus):
        raise CorpusError(f"corpus '{corpus.name}' is empty")
    tokens: List[np.ndarray] = []
    taps: List[List[np.ndarray]] = [[] for _ in tap_layers]
    with no_grad():
        for batch in corpus.iter_batches(batch_size):
            final, tapped = forward_features(encoder, batch.pixels, tap_layers, interpolate)
            tokens.append(final.data.copy())
            for bucket, tap in zip(taps, tapped):
                bucket.append(tap.data.copy())
    features = FeatureSet(np.concatenate(tokens), [np.concatenate(bucket) for bucket in taps])
    logger.debug(f"Encoded {len(features)} clips of '{corpus.name}' into {features.tokens.shape[1:]} tokens")
    return features


def embed_videos(model: DualEncoder, corpus: Corpus, batch_size: int = 32, interpolate: bool = True) -> np.ndarray:
    """Normalised [N, P] video embeddings"""
    if not len(corpus):
        raise CorpusError(f"corpus '{corpus.name}' is empty")
    with no_grad():
        chunks = [
            model.embed_video(batch.pixels, interpolate=interpolate).data.copy()
            for batch in corpus.iter_batches(batch_size)
        ]
    return np.concatenate(chunks)


def embed_texts(model: DualEncoder, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
    """Normalised [N, P] text embeddings"""
    texts = list(texts)
    if not texts:
        return np.zeros((0, model.cfg.stage1.proj_dim))
    with no_grad():
        chunks = [
            model.embed_text(texts[start: start + batch_size]).data.copy()
            for start in range(0, len(texts), batch_size)
        ]
    return np.concatenate(chunks)


def clone_encoder(encoder: VideoEncoder) -> VideoEncoder:
    """Independent copy of the pretrained weights (adapters are not copied)"""
    copy = VideoEncoder(encoder.cfg, derive_rng(0, "clone"))
    copy.load_state_dict(encoder.state_dict())
    return copy
