"""Stage-2 decoders and token shuffling"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..config import DecoderConfig
from ..errors import ShapeError
from .layers import Linear, MapHead, TransformerStack, canonical_order, key_padding_mask
from .params import Module, Parameter, trunc_normal

logger = logging.getLogger(__name__)


@dataclass
class ShuffleResult:
    """Decoder input plus the bookkeeping needed to audit it

    ``source`` indexes the concatenated ``[visible (M padded rows), mask copies (n rows)]``
    sequence: slot ``i`` holds ``source[b, i]``. ``perm`` is the permutation applied to the
    unshuffled ``[visible, mask]`` order (identity when shuffling is off).
    """
    inputs: Tensor
    content: Tensor
    source: np.ndarray
    perm: np.ndarray
    visible_count: np.ndarray


def shuffle_fill(
    visible: Tensor,
    mask_emb: Tensor,
    pos_emb: Tensor,
    rng: Optional[np.random.Generator] = None,
    valid: Optional[np.ndarray] = None,
    positions: Optional[np.ndarray] = None,
    shuffle: bool = True,
) -> ShuffleResult:
    """Fill masked slots with ``mask_emb``, shuffle, then add ``pos_emb`` in slot order

    Args:
        visible: [b, M, dim] visible embeddings (valid rows first, padding after)
        mask_emb: [dim] learnable mask embedding
        pos_emb: [n, dim] positional table; slot i always receives row i
        rng: Source of the per-sample permutations (required when shuffling)
        valid: [b, M] validity of the visible rows (None = all valid)
        positions: [b, M] canonical positions of the visible rows; needed when
            ``shuffle`` is off so every visible token lands on its own slot
        shuffle: Draw an independent uniform permutation per sample

    Returns:
        ShuffleResult with ``inputs`` of shape [b, n, dim]
    """
    b, m_pad, dim = visible.shape
    n = pos_emb.shape[0]
    if mask_emb.shape != (dim,) or pos_emb.shape[1] != dim:
        raise ShapeError("shuffle_fill", [visible.shape, mask_emb.shape, pos_emb.shape])
    valid = np.ones((b, m_pad), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    counts = valid.sum(axis=1)
    if (counts > n).any():
        raise ShapeError("shuffle_fill", [visible.shape, pos_emb.shape], f"m={int(counts.max())} exceeds n={n}")
    if shuffle and rng is None:
        raise ValueError("shuffle_fill needs an rng when shuffling")
    if not shuffle and positions is None and (counts < n).any():
        raise ValueError("unshuffled fill needs the canonical positions of the visible tokens")

    tiled = ops.broadcast_to(ops.reshape(mask_emb, (1, 1, dim)), (b, n, dim))
    pool = ops.concat([visible, tiled], axis=1)

    source = np.empty((b, n), dtype=np.int64)
    perm = np.empty((b, n), dtype=np.int64)
    for row in range(b):
        m = int(counts[row])
        visible_rows = np.flatnonzero(valid[row])
        unshuffled = np.concatenate([visible_rows, m_pad + np.arange(n - m)])
        if shuffle:
            perm[row] = rng.permutation(n)
            source[row] = unshuffled[perm[row]]
        else:
            slots = np.empty(n, dtype=np.int64)
            if positions is None:
                slots[:] = visible_rows
            else:
                taken = np.zeros(n, dtype=bool)
                slot_of_visible = np.asarray(positions[row])[visible_rows]
                slots[slot_of_visible] = visible_rows
                taken[slot_of_visible] = True
                slots[~taken] = m_pad + np.arange(n - m)
            source[row] = slots
            perm[row] = np.arange(n)

    content = ops.batch_gather(pool, source)
    inputs = content + ops.reshape(pos_emb, (1, n, dim))
    return ShuffleResult(inputs, content, source, perm, counts)


class LocalDecoder(Module):
    """Token-wise decoder: mask fill, shuffle, pos-emb, project down, 4 blocks, project up"""

    def __init__(self, enc_dim: int, num_tokens: int, cfg: DecoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.mask_emb = Parameter(trunc_normal(rng, (enc_dim,)))
        self.pos_emb = Parameter(trunc_normal(rng, (num_tokens, enc_dim)))
        self.in_proj = Linear(enc_dim, cfg.hidden_dim, rng)
        self.stack = TransformerStack(cfg.hidden_dim, cfg.layers, cfg.heads, cfg.mlp_hidden, rng)
        self.out_proj = Linear(cfg.hidden_dim, enc_dim, rng)

    @property
    def num_tokens(self) -> int:
        return self.pos_emb.shape[0]

    def __call__(self, inputs: Tensor) -> Tensor:
        """[b, n, D] filled decoder input -> [b, n, D] predictions; slot i predicts token i"""
        return self.out_proj(self.stack(self.in_proj(inputs)))


def local_decode(inputs: Tensor, decoder: LocalDecoder) -> Tensor:
    return decoder(inputs)


class GlobalDecoder(Module):
    """Global decoder: project down, 4 blocks (no shuffle, no pos-emb), project up, MAP"""

    def __init__(
        self,
        enc_dim: int,
        cfg: DecoderConfig,
        rng: np.random.Generator,
        map_heads: int,
        map_hidden: int,
        d_out: Optional[int] = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.in_proj = Linear(enc_dim, cfg.hidden_dim, rng)
        self.stack = TransformerStack(cfg.hidden_dim, cfg.layers, cfg.heads, cfg.mlp_hidden, rng)
        self.out_proj = Linear(cfg.hidden_dim, enc_dim, rng)
        self.map_head = MapHead(enc_dim, map_heads, map_hidden, rng, d_out=d_out)

    def __call__(self, visible: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        """[b, M, D] visible tokens -> [b, D_out]"""
        if visible.shape[1] == 0:
            raise ShapeError("global_decode", [visible.shape], "no visible tokens")
        if valid is not None and not np.asarray(valid, dtype=bool).any(axis=1).all():
            raise ShapeError("global_decode", [visible.shape], "a sample has no visible tokens")
        order = canonical_order(visible.data, valid)
        visible = ops.batch_gather(visible, order)
        if valid is not None:
            valid = np.take_along_axis(np.asarray(valid, dtype=bool), order, axis=1)
        x = self.in_proj(visible)
        x = self.stack(x, mask=key_padding_mask(valid))
        x = self.out_proj(x)
        return self.map_head(x, key_mask=valid)


def global_decode(visible: Tensor, decoder: GlobalDecoder, valid: Optional[np.ndarray] = None) -> Tensor:
    return decoder(visible, valid)
