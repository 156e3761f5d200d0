"""Transformer building blocks shared by the video, text and decoder stacks"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import ConfigError, ShapeError
from .params import Module, ModuleList, Parameter, trunc_normal, xavier_uniform

logger = logging.getLogger(__name__)


class Linear(Module):
    """``y = x @ W + b`` with an optional low-rank adapter ``(x @ A) @ B * alpha / r``"""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.lora_scaling = 0.0

    @property
    def has_lora(self) -> bool:
        return "lora_down" in self._params

    def attach_lora(self, rank: int, alpha: float, rng: np.random.Generator) -> None:
        """Add a rank-``rank`` adapter whose up-projection starts at zero"""
        if rank < 1 or rank > min(self.d_in, self.d_out):
            raise ConfigError(
                f"LoRA rank {rank} must be in [1, {min(self.d_in, self.d_out)}] "
                f"for a {self.d_in}x{self.d_out} weight"
            )
        bound = 1.0 / np.sqrt(self.d_in)
        self.lora_down = Parameter(rng.uniform(-bound, bound, size=(self.d_in, rank)))
        self.lora_up = Parameter(np.zeros((rank, self.d_out)))
        self.lora_scaling = alpha / rank

    def detach_lora(self) -> None:
        if self.has_lora:
            del self.lora_down
            del self.lora_up
            self.lora_scaling = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        if self.has_lora:
            delta = ops.matmul(ops.matmul(x, self.lora_down), self.lora_up)
            out = out + delta * self.lora_scaling
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, d_out: Optional[int] = None):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, d_out or dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis

    Inputs carry arbitrary leading batch axes: ``x`` is [..., Lq, dim] and
    ``context`` (defaults to ``x``) is [..., Lk, d_kv]. ``mask`` is a boolean
    array broadcastable to [..., heads, Lq, Lk]; True marks allowed pairs.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, d_kv: Optional[int] = None):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"attention dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        d_kv = d_kv or dim
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(d_kv, dim, rng)
        self.v_proj = Linear(d_kv, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        lead, length = x.shape[:-2], x.shape[-2]
        x = ops.reshape(x, lead + (length, self.heads, self.head_dim))
        return ops.swapaxes(x, -2, -3)

    def __call__(
        self,
        x: Tensor,
        context: Optional[Tensor] = None,
        mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        context = x if context is None else context
        if x.shape[:-2] != context.shape[:-2]:
            raise ShapeError("attention", [x.shape, context.shape], "batch axes differ")
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(context))
        v = self._split(self.v_proj(context))
        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        weights = ops.softmax(scores, axis=-1, where=mask)
        out = ops.swapaxes(ops.matmul(weights, v), -2, -3)
        out = ops.reshape(out, x.shape[:-1] + (self.dim,))
        return self.out_proj(out)


def key_padding_mask(key_mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """[..., Lk] validity → attention mask broadcastable to [..., heads, Lq, Lk]"""
    if key_mask is None:
        return None
    return np.asarray(key_mask, dtype=bool)[..., None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


class TransformerBlock(Module):
    """Pre-norm block: ``x + MSA(LN(x))`` then ``x + MLP(LN(x))``"""

    def __init__(self, dim: int, heads: int, mlp_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_hidden, rng)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        return x + self.mlp(self.ln2(x))


class TransformerStack(Module):
    def __init__(self, dim: int, depth: int, heads: int, mlp_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.blocks = ModuleList(TransformerBlock(dim, heads, mlp_hidden, rng) for _ in range(depth))

    def __len__(self) -> int:
        return len(self.blocks)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask=mask)
        return x

    def run_with_taps(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, List[Tensor]]:
        """Forward pass that also returns every block's output"""
        taps: List[Tensor] = []
        for block in self.blocks:
            x = block(x, mask=mask)
            taps.append(x)
        return x, taps


def canonical_order(tokens: np.ndarray, key_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-sample lexicographic row order, valid rows first

    Args:
        tokens: [B, L, D] values
        key_mask: Optional [B, L] validity

    Returns:
        [B, L] gather indices
    """
    batch, length = tokens.shape[:2]
    order = np.empty((batch, length), dtype=np.int64)
    for b in range(batch):
        keys = [tokens[b, :, d] for d in reversed(range(tokens.shape[2]))]
        if key_mask is not None:
            keys.append(~np.asarray(key_mask[b], dtype=bool))
        order[b] = np.lexsort(keys)
    return order


class MapHead(Module):
    """Multi-head attention pooler: one learned query cross-attends over the tokens

    Tokens are put in canonical row order before attending, which makes the
    pooled output bit-identical under any permutation of the input sequence.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        mlp_hidden: int,
        rng: np.random.Generator,
        d_out: Optional[int] = None,
    ):
        super().__init__()
        self.dim = dim
        self.query = Parameter(trunc_normal(rng, (1, dim)))
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_hidden, rng)
        self.proj = Linear(dim, d_out, rng) if d_out else None
        self.d_out = d_out or dim

    def __call__(self, tokens: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """Pool [B, L, D] (or [L, D]) tokens into [B, D_out] (or [D_out])"""
        single = tokens.ndim == 2
        if single:
            tokens = ops.reshape(tokens, (1,) + tokens.shape)
            key_mask = None if key_mask is None else np.asarray(key_mask)[None]
        if tokens.ndim != 3 or tokens.shape[1] == 0:
            raise ShapeError("map_pool", [tokens.shape], "need a non-empty [B, L, D] token sequence")
        if key_mask is not None and not np.asarray(key_mask, dtype=bool).any(axis=1).all():
            raise ShapeError("map_pool", [tokens.shape], "a sample has no valid tokens")

        order = canonical_order(tokens.data, key_mask)
        tokens = ops.batch_gather(tokens, order)
        if key_mask is not None:
            key_mask = np.take_along_axis(np.asarray(key_mask, dtype=bool), order, axis=1)

        batch = tokens.shape[0]
        query = ops.broadcast_to(self.query, (batch, 1, self.dim))
        pooled = self.attn(query, context=tokens, mask=key_padding_mask(key_mask))
        pooled = pooled + self.mlp(self.ln(pooled))
        pooled = ops.reshape(pooled, (batch, self.dim))
        if self.proj is not None:
            pooled = self.proj(pooled)
        return ops.reshape(pooled, (self.d_out,)) if single else pooled


def map_pool(tokens: Tensor, head: MapHead, key_mask: Optional[np.ndarray] = None) -> Tensor:
    return head(tokens, key_mask=key_mask)
