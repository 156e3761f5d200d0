"""Video-text contrastive objective and the dual-encoder model it trains

The video tower's tokens are pooled by a MAP head with a projection to the
shared dimension; the text tower reads its class-token output through its
own projection. Both embeddings are L2-normalised and compared with a
learnable temperature stored as ``log tau``.
"""

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..config import AppConfig, validate_config
from ..errors import NonFiniteError, ShapeError
from ..model.encoder import VideoEncoder
from ..model.layers import MapHead
from ..model.params import Module, Parameter
from ..model.text import TextEncoder, Vocabulary, pack_batch
from ..rng import derive_rng

logger = logging.getLogger(__name__)


def similarity_logits(video: Tensor, text: Tensor, tau: Union[Tensor, float]) -> Tensor:
    """``logits[i, j] = <v_i, t_j> / tau`` for normalised [B, D] embeddings"""
    tau_value = float(tau.data) if isinstance(tau, Tensor) else float(tau)
    if not np.isfinite(tau_value) or tau_value <= 0:
        raise NonFiniteError("temperature", "similarity_logits")
    if video.ndim != 2 or text.ndim != 2 or video.shape[1] != text.shape[1]:
        raise ShapeError("similarity_logits", [video.shape, text.shape])
    return ops.matmul(video, ops.transpose(text)) / tau


def symmetric_ce_loss(logits: Tensor) -> Tensor:
    """Mean of video->text (rows) and text->video (columns) cross-entropy; targets are the diagonal"""
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1] or logits.shape[0] < 1:
        raise ShapeError("symmetric_ce_loss", [logits.shape], "need a non-empty square matrix")
    targets = np.arange(logits.shape[0])
    forward = ops.cross_entropy(logits, targets)
    backward = ops.cross_entropy(ops.transpose(logits), targets)
    return (forward + backward) * 0.5


class ContrastiveHead(Module):
    """Video MAP pooler with projection, plus the learnable temperature"""

    def __init__(
        self,
        dim: int,
        heads: int,
        mlp_hidden: int,
        proj_dim: int,
        rng: np.random.Generator,
        tau_init: float = 0.07,
        tau_min: float = 0.01,
    ):
        super().__init__()
        self.map_head = MapHead(dim, heads, mlp_hidden, rng, d_out=proj_dim)
        self.log_tau = Parameter(np.array(math.log(tau_init)))
        self.tau_min = tau_min

    def temperature(self) -> Tensor:
        return ops.exp(self.log_tau)

    def clamp_temperature(self) -> None:
        floor = math.log(self.tau_min)
        if float(self.log_tau.data) < floor:
            self.log_tau.data = np.full_like(self.log_tau.data, floor)


class DualEncoder(Module):
    """Stage-1 model: video tower, text tower and contrastive head

    Checkpoint names live under ``video.``, ``text.`` and ``head.``; the
    vocabulary travels in checkpoint metadata.
    """

    def __init__(self, cfg: AppConfig, vocab: Vocabulary, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        enc = cfg.encoder
        self.video = VideoEncoder(enc, rng)
        self.text = TextEncoder(cfg.text, len(vocab), rng, proj_dim=cfg.stage1.proj_dim)
        self.head = ContrastiveHead(
            enc.embed_dim, enc.heads, enc.mlp_hidden, cfg.stage1.proj_dim, rng,
            tau_init=cfg.stage1.temperature_init, tau_min=cfg.stage1.temperature_min,
        )

    @classmethod
    def from_checkpoint(cls, ckpt, cfg: Optional[AppConfig] = None) -> "DualEncoder":
        cfg = cfg or validate_config(ckpt.config)
        vocab = Vocabulary.from_list(ckpt.meta["vocab"])
        model = cls(cfg, vocab, derive_rng(0, "restore"))
        for prefix, module in (("video.", model.video), ("text.", model.text), ("head.", model.head)):
            module.load_state_dict(ckpt.params, prefix=prefix)
        return model

    def pool_video(self, tokens: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """Normalised video embedding from encoder tokens [B, L, D]"""
        return ops.l2_normalize(self.head.map_head(tokens, key_mask=key_mask))

    def embed_video(
        self,
        pixels,
        keep_spatial: Optional[np.ndarray] = None,
        interpolate: bool = False,
    ) -> Tensor:
        out = self.video(pixels, keep_spatial=keep_spatial, interpolate=interpolate)
        return self.pool_video(out.tokens(), out.key_mask())

    def text_ids(self, captions: Sequence[str]) -> np.ndarray:
        return pack_batch([self.vocab.encode(c) for c in captions], self.cfg.text.max_len)

    def embed_text(self, captions: Sequence[str]) -> Tensor:
        return ops.l2_normalize(self.text(self.text_ids(captions)))

    def loss(self, video_emb: Tensor, text_emb: Tensor) -> Tensor:
        return symmetric_ce_loss(similarity_logits(video_emb, text_emb, self.head.temperature()))
