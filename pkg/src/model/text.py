"""Word vocabulary and text tower

Sentences are lower-cased and split on whitespace. The tower appends a
learnable class token right after the last word and reads the text embedding
off that position.
"""

import logging
import re
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..config import TextEncoderConfig
from ..errors import ShapeError
from .layers import LayerNorm, Linear, TransformerStack, causal_mask, key_padding_mask
from .params import Module, Parameter, trunc_normal

logger = logging.getLogger(__name__)

PAD_ID = 0
CLS_ID = 1
UNK_ID = 2
SPECIAL_TOKENS = ("<pad>", "<cls>", "<unk>")

_PUNCTUATION = re.compile(r"[^\w\s']")


def tokenize(text: str) -> List[str]:
    return _PUNCTUATION.sub(" ", text.lower()).split()


class Vocabulary:
    """Deterministic word -> id table; ids 0..2 are reserved for pad / class / unknown"""

    def __init__(self, words: Sequence[str]):
        self.itos: List[str] = list(SPECIAL_TOKENS) + [w for w in words if w not in SPECIAL_TOKENS]
        self.stoi: Dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(word for text in texts for word in tokenize(text))
        words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        logger.info(f"Built vocabulary with {len(words)} words (min_count={min_count})")
        return cls(words)

    def encode(self, text: str, max_words: Optional[int] = None) -> List[int]:
        ids = [self.stoi.get(word, UNK_ID) for word in tokenize(text)]
        return ids[:max_words] if max_words is not None else ids

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i not in (PAD_ID, CLS_ID))

    def to_list(self) -> List[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[:3]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary list must start with the reserved tokens")
        return cls(itos[3:])


def pack_batch(token_ids: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    """Truncate to ``max_len - 1`` words, append the class id, pad to ``max_len``"""
    batch = np.full((len(token_ids), max_len), PAD_ID, dtype=np.int64)
    for row, ids in enumerate(token_ids):
        ids = list(ids)[: max_len - 1]
        batch[row, : len(ids)] = ids
        batch[row, len(ids)] = CLS_ID
    return batch


class TextEncoder(Module):
    """Transformer text tower; output is the class-token position, optionally projected"""

    def __init__(
        self,
        cfg: TextEncoderConfig,
        vocab_size: int,
        rng: np.random.Generator,
        proj_dim: Optional[int] = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        dim = cfg.embed_dim
        self.token_emb = Parameter(trunc_normal(rng, (vocab_size, dim)))
        self.pos_emb = Parameter(trunc_normal(rng, (cfg.max_len, dim)))
        self.stack = TransformerStack(dim, cfg.layers, cfg.heads, cfg.mlp_hidden, rng)
        self.final_norm = LayerNorm(dim)
        self.proj = Linear(dim, proj_dim, rng) if proj_dim else None

    def __call__(self, ids: np.ndarray) -> Tensor:
        """[B, max_len] packed ids (see ``pack_batch``) -> [B, D_out] embeddings"""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] > self.cfg.max_len:
            raise ShapeError("encode_text", [ids.shape], f"expected [B, <= {self.cfg.max_len}] ids")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = int(ids.max()) if ids.max() >= self.vocab_size else int(ids.min())
            raise ShapeError("encode_text", [ids.shape], f"token id {bad} outside vocabulary of {self.vocab_size}")
        cls_pos = (ids == CLS_ID).argmax(axis=1)
        if not (ids[np.arange(len(ids)), cls_pos] == CLS_ID).all():
            raise ShapeError("encode_text", [ids.shape], "every row needs a class token")

        length = ids.shape[1]
        x = ops.take(self.token_emb, ids) + ops.take(self.pos_emb, np.arange(length))
        mask = key_padding_mask(ids != PAD_ID)
        if self.cfg.causal:
            mask = mask & causal_mask(length)[None, None]
        x = self.final_norm(self.stack(x, mask=mask))
        out = ops.reshape(ops.batch_gather(x, cls_pos[:, None]), (len(ids), self.cfg.embed_dim))
        return self.proj(out) if self.proj is not None else out


def encode_text(
    texts: Sequence[str],
    vocab: Vocabulary,
    encoder: TextEncoder,
) -> Tensor:
    """Tokenize, pack and encode raw sentences"""
    ids = pack_batch([vocab.encode(t) for t in texts], encoder.cfg.max_len)
    return encoder(ids)
