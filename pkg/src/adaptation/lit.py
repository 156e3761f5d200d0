"""Locked-image tuning: a text tower learns to match a frozen video encoder

The video encoder's tokens are computed once per corpus. The text tower and
the video-side MAP head start from their Stage-1 weights and are the only
parameters that train.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from ..autograd.optim import OptimizerState
from ..autograd.schedule import LrSchedule
from ..autograd.tensor import Tensor
from ..config import AppConfig
from ..corpus.dataset import Corpus
from ..errors import FrozenParametersError
from ..model.params import parameter_hash
from ..rng import derive_rng
from ..storage.checkpoint import Checkpoint
from ..training.agd import AgdSchedule
from ..training.common import StepResult, TrainHistory, check_finite, log_step, make_optimizer, make_schedule, optimizer_step
from ..training.contrastive import DualEncoder
from .features import FeatureSet, encode_corpus

logger = logging.getLogger(__name__)

EvalFn = Callable[[DualEncoder, int], Dict[str, float]]


@dataclass
class LitResult:
    model: DualEncoder
    optimizer: OptimizerState
    history: TrainHistory
    checkpoint: Checkpoint
    video_hash: str


def locked_model(cfg: AppConfig, stage1: DualEncoder, encoder_state: Mapping[str, np.ndarray]) -> DualEncoder:
    """Dual encoder with the given video weights (frozen) and Stage-1 text tower and head"""
    model = DualEncoder(cfg, stage1.vocab, derive_rng(0, "restore"))
    model.video.load_state_dict(encoder_state)
    model.text.load_state_dict(stage1.text.state_dict())
    model.head.load_state_dict(stage1.head.state_dict())
    model.video.freeze()
    return model


def lit_checkpoint(model: DualEncoder, state: OptimizerState, step: int, video_hash: str) -> Checkpoint:
    params = model.video.state_dict("video.")
    params.update(model.text.state_dict("text."))
    params.update(model.head.state_dict("head."))
    return Checkpoint(
        kind="lit",
        step=step,
        params=params,
        optimizer=state,
        config=model.cfg.snapshot(),
        meta={"vocab": model.vocab.to_list(), "video_hash": video_hash},
    )


def lit_step(
    model: DualEncoder,
    features: FeatureSet,
    batch_indices: np.ndarray,
    captions: Sequence[str],
    state: OptimizerState,
    schedule: LrSchedule,
    step: int,
    corpus: str,
) -> StepResult:
    tokens = Tensor(features.tokens[batch_indices])
    loss = model.loss(model.pool_video(tokens), model.embed_text(captions))
    value = check_finite(loss, step, "lit", corpus)
    params = {name: p for name, p in model.named_parameters() if p.requires_grad}
    lr = optimizer_step(loss, params, state, schedule, step)
    model.head.clamp_temperature()
    return StepResult(step, value, lr, corpus, {"temperature": float(np.exp(model.head.log_tau.data))})


def lit_tune(
    cfg: AppConfig,
    stage1: DualEncoder,
    encoder_state: Mapping[str, np.ndarray],
    corpora: Sequence[Corpus],
    seed: int,
    eval_fn: Optional[EvalFn] = None,
) -> LitResult:
    """Tune the text tower and MAP head against a locked video encoder

    Args:
        cfg: Configuration (``lit`` section drives the loop)
        stage1: Stage-1 model supplying the text tower, head and vocabulary
        encoder_state: Video encoder weights to lock (e.g. the Stage-2 student)
        corpora: Training corpora, alternated like Stage 1
        seed: Run seed
        eval_fn: Called every ``stage1.eval_every`` steps

    Raises:
        FrozenParametersError: The video encoder changed during tuning
    """
    lit = cfg.lit
    model = locked_model(cfg, stage1, encoder_state)
    video_hash = parameter_hash(model.video)
    features = [encode_corpus(model.video, corpus, cfg.eval.batch_size) for corpus in corpora]

    params = {name: p for name, p in model.named_parameters() if p.requires_grad}
    state = make_optimizer(lit.optim, params)
    schedule = make_schedule(lit.optim, lit.steps)
    agd = AgdSchedule([len(c) for c in corpora])
    history = TrainHistory()
    logger.info(f"LiT: {lit.steps} steps, batch {lit.batch_size}, {len(params)} trainable tensors")

    for step in range(lit.steps):
        index, draw = agd.assign(step)
        batch = corpora[index].batch(draw, lit.batch_size, seed)
        result = lit_step(model, features[index], batch.indices, batch.captions, state, schedule, step, batch.corpus)
        history.steps.append(result)
        log_step("lit", result)
        done = step + 1
        if eval_fn and cfg.stage1.eval_every and done % cfg.stage1.eval_every == 0:
            metrics = eval_fn(model, done)
            history.evals.append({"step": done, **metrics})

    if parameter_hash(model.video) != video_hash:
        raise FrozenParametersError("video encoder", "LiT tuning")
    return LitResult(model, state, history, lit_checkpoint(model, state, lit.steps, video_hash), video_hash)
