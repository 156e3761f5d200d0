"""Masked distillation objective

The frozen Stage-1 model sees the intact clip and provides two targets: its
token embeddings (after the final norm, before pooling) and its pooled MAP
embedding. The student sees only the visible tokens. A local decoder fills
the masked slots with the mask embedding, shuffles, adds positional
embeddings in slot order and regresses every token target; a global decoder
pools the visible tokens and regresses the pooled target. Both terms are
cosine distances with equal weight.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor, as_tensor, no_grad
from ..config import AppConfig, Stage2Config
from ..errors import NonFiniteError, ShapeError
from ..masking import MaskSpec, gather_visible, stack_visibility, tube_keep_index
from ..model.decoder import GlobalDecoder, LocalDecoder, ShuffleResult, shuffle_fill
from ..model.encoder import VideoEncoder
from ..model.params import Module
from .contrastive import DualEncoder

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-8


@dataclass
class DistillTargets:
    """Teacher outputs on unmasked clips

    ``tokens`` is [B, n, D] in canonical temporal-major order; ``pooled`` is
    [B, D_out], the teacher's MAP embedding.
    """
    tokens: np.ndarray
    pooled: np.ndarray


def teacher_targets(pixels, teacher: DualEncoder, pre_norm: bool = False) -> DistillTargets:
    """Run the frozen teacher on the full clip (no masking, no gradients)

    Clips with more frames than the teacher's temporal table use interpolated
    positional embeddings; spatial mismatches raise ``ShapeError``.
    """
    with no_grad():
        out = teacher.video(pixels, interpolate=True)
        pooled = teacher.head.map_head(out.tokens())
        tokens = out.tokens(pre_norm=pre_norm)
    return DistillTargets(tokens.data.copy(), pooled.data.copy())


def cosine_distance_loss(
    pred: Tensor,
    target,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Mean over rows of ``1 - cos(pred, target)``

    Args:
        pred: [..., D] predictions
        target: [..., D] targets (array or tensor); zero rows are guarded by eps
        weights: Optional [...] row weights (e.g. masked positions only)
    """
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError("cosine_distance", [pred.shape, target.shape])
    cos = ops.sum(ops.l2_normalize(pred, eps=COSINE_EPS) * ops.l2_normalize(target, eps=COSINE_EPS), axis=-1)
    distance = 1.0 - cos
    if weights is None:
        loss = ops.mean(distance)
    else:
        weights = np.asarray(weights, dtype=pred.dtype)
        if weights.shape != distance.shape:
            raise ShapeError("cosine_distance", [distance.shape, weights.shape], "row weights")
        total = float(weights.sum())
        if total <= 0:
            raise ShapeError("cosine_distance", [weights.shape], "weights select no rows")
        loss = ops.sum(distance * as_tensor(weights, dtype=pred.dtype)) * (1.0 / total)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("cosine distance", "distillation loss")
    return loss


class Stage2Model(Module):
    """Student encoder plus the two training-only decoders"""

    DISCARDABLE = ("local_decoder.", "global_decoder.")

    def __init__(self, cfg: AppConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.student = VideoEncoder(enc, rng)
        self.local_decoder = LocalDecoder(enc.embed_dim, enc.num_tokens, cfg.decoder, rng)
        self.global_decoder = GlobalDecoder(
            enc.embed_dim, cfg.decoder, rng,
            map_heads=enc.heads, map_hidden=enc.mlp_hidden, d_out=cfg.stage1.proj_dim,
        )

    def init_from_teacher(self, teacher: DualEncoder) -> None:
        self.student.load_state_dict(teacher.video.state_dict())


@dataclass
class StudentView:
    """Student tokens for the visible positions, padded per sample"""
    values: Tensor
    index: np.ndarray
    valid: np.ndarray


def encode_visible(student: VideoEncoder, pixels, masks: Sequence[MaskSpec]) -> StudentView:
    """Tube masks drop tokens before encoding; irregular masks hide them from attention"""
    batch = len(masks)
    if all(m.is_tube() for m in masks) and len({m.visible_count for m in masks}) == 1:
        keep = tube_keep_index(masks)
        out = student(pixels, keep_spatial=keep)
        positions = out.grid.positions()
        return StudentView(out.tokens(), positions, np.ones(positions.shape, dtype=bool))
    visible = stack_visibility(masks)
    out = student(pixels, visible=visible)
    gathered = gather_visible(out.tokens(), visible.reshape(batch, -1))
    return StudentView(gathered.values, gathered.index, gathered.valid)


@dataclass
class Stage2Loss:
    total: Tensor
    token: Tensor
    global_: Optional[Tensor]
    shuffle: ShuffleResult
    predictions: Tensor
    parts: Dict[str, float] = field(default_factory=dict)


def stage2_loss(
    pixels,
    model: Stage2Model,
    masks: Sequence[MaskSpec],
    targets: DistillTargets,
    rng: np.random.Generator,
    cfg: Stage2Config,
) -> Stage2Loss:
    """Token-wise plus global distillation loss for one batch

    Slot ``i`` of the local decoder output is paired with teacher token ``i``;
    with ``cfg.masked_only`` only masked positions contribute to the token term.
    """
    view = encode_visible(model.student, pixels, masks)
    local = model.local_decoder
    fill = shuffle_fill(
        view.values, local.mask_emb, local.pos_emb, rng=rng,
        valid=view.valid, positions=view.index, shuffle=cfg.shuffle,
    )
    predictions = local(fill.inputs)
    weights = None
    if cfg.masked_only:
        weights = np.stack([m.grid.reshape(-1) for m in masks]).astype(np.float64)
    token = cosine_distance_loss(predictions, targets.tokens, weights)

    parts = {"token_loss": float(token.data)}
    global_term = None
    total = token
    if cfg.global_distill:
        pooled = model.global_decoder(view.values, view.valid)
        global_term = cosine_distance_loss(pooled, targets.pooled)
        parts["global_loss"] = float(global_term.data)
        total = token + global_term
    return Stage2Loss(total, token, global_term, fill, predictions, parts)
