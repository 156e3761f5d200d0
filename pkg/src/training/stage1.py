"""Stage 1: video-text contrastive pretraining

Each step takes one homogeneous batch from the alternating-corpus schedule,
drops half of the video tokens with a per-clip tube mask (images are
one-frame clips and keep every token), pools the visible tokens with the MAP
head and minimises the symmetric cross-entropy against the captions.
All randomness is derived from ``(seed, step)``, so resuming a checkpoint
reproduces the uninterrupted run bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..autograd.optim import OptimizerState
from ..autograd.schedule import LrSchedule
from ..config import AppConfig
from ..corpus.dataset import Batch, Corpus
from ..errors import CorpusError
from ..masking import sample_tube_mask, tube_keep_index
from ..model.text import Vocabulary
from ..rng import derive_rng, derive_seed
from ..storage.checkpoint import Checkpoint
from .agd import AgdSchedule
from .common import StepResult, TrainHistory, check_finite, log_step, make_optimizer, make_schedule, optimizer_step
from .contrastive import DualEncoder

logger = logging.getLogger(__name__)

EvalFn = Callable[[DualEncoder, int], Dict[str, float]]
CheckpointFn = Callable[[Checkpoint], None]


def tube_keep(batch: Batch, num_spatial: int, ratio: float, seed: int, step: int) -> Optional[np.ndarray]:
    """[B, S_keep] kept positions, or None when nothing is dropped"""
    if batch.is_image or ratio <= 0:
        return None
    frames = batch.pixels.shape[1]
    masks = [
        sample_tube_mask(frames, num_spatial, ratio, derive_seed(seed, "stage1", "mask", step, i))
        for i in range(len(batch))
    ]
    return tube_keep_index(masks)


def stage1_step(
    model: DualEncoder,
    batch: Batch,
    state: OptimizerState,
    schedule: LrSchedule,
    step: int,
    seed: int,
    mask_ratio: float = 0.5,
) -> StepResult:
    """One contrastive update on a single-corpus batch"""
    if len({r.kind for r in batch.records}) > 1:
        raise CorpusError(f"batch from '{batch.corpus}' mixes media kinds")
    keep = tube_keep(batch, model.cfg.encoder.num_spatial, mask_ratio, seed, step)
    video = model.embed_video(batch.pixels, keep_spatial=keep)
    text = model.embed_text(batch.captions)
    loss = model.loss(video, text)
    value = check_finite(loss, step, "stage1", batch.corpus)
    lr = optimizer_step(loss, model.trainable_parameters(), state, schedule, step)
    model.head.clamp_temperature()
    return StepResult(step, value, lr, batch.corpus, {"temperature": float(np.exp(model.head.log_tau.data))})


def build_vocabulary(corpora: Sequence[Corpus], min_count: int = 1) -> Vocabulary:
    return Vocabulary.build([c for corpus in corpora for c in corpus.captions], min_count=min_count)


def stage1_checkpoint(model: DualEncoder, state: OptimizerState, step: int) -> Checkpoint:
    params = model.video.state_dict("video.")
    params.update(model.text.state_dict("text."))
    params.update(model.head.state_dict("head."))
    return Checkpoint(
        kind="stage1",
        step=step,
        params=params,
        optimizer=state,
        config=model.cfg.snapshot(),
        meta={"vocab": model.vocab.to_list()},
    )


@dataclass
class Stage1Result:
    model: DualEncoder
    optimizer: OptimizerState
    history: TrainHistory
    checkpoint: Checkpoint


def train_stage1(
    cfg: AppConfig,
    corpora: Sequence[Corpus],
    seed: int,
    resume: Optional[Checkpoint] = None,
    vocab: Optional[Vocabulary] = None,
    eval_fn: Optional[EvalFn] = None,
    checkpoint_fn: Optional[CheckpointFn] = None,
) -> Stage1Result:
    """Contrastive pretraining over one or more corpora

    Args:
        cfg: Full configuration (``stage1`` section drives the loop)
        corpora: Training corpora; batches alternate between them
        seed: Run seed
        resume: Checkpoint to continue from (same config and corpora)
        vocab: Vocabulary (built from the corpora when omitted)
        eval_fn: Called every ``stage1.eval_every`` steps with the model and step
        checkpoint_fn: Receives periodic checkpoints (``stage1.checkpoint_every``)

    Raises:
        TrainingDivergedError: Loss became NaN/inf (names step and corpus)
    """
    s1 = cfg.stage1
    if resume is not None:
        vocab = Vocabulary.from_list(resume.meta["vocab"])
    vocab = vocab or build_vocabulary(corpora, cfg.text.min_count)
    model = DualEncoder(cfg, vocab, derive_rng(seed, "init", "stage1"))
    state = make_optimizer(s1.optim, model.trainable_parameters())
    start = 0
    if resume is not None:
        model.video.load_state_dict(resume.params, prefix="video.")
        model.text.load_state_dict(resume.params, prefix="text.")
        model.head.load_state_dict(resume.params, prefix="head.")
        state = resume.optimizer or state
        start = resume.step
        logger.info(f"Resuming stage 1 from step {start}")

    schedule = make_schedule(s1.optim, s1.steps)
    agd = AgdSchedule([len(c) for c in corpora])
    history = TrainHistory()
    logger.info(
        f"Stage 1: {s1.steps} steps, batch {s1.batch_size}, corpora "
        f"{[f'{c.name}({len(c)})' for c in corpora]}, {model.num_parameters()} parameters"
    )

    for step in range(start, s1.steps):
        index, draw = agd.assign(step)
        batch = corpora[index].batch(draw, s1.batch_size, seed)
        result = stage1_step(model, batch, state, schedule, step, seed, s1.mask_ratio)
        history.steps.append(result)
        log_step("stage1", result)

        done = step + 1
        if eval_fn and s1.eval_every and done % s1.eval_every == 0:
            metrics = eval_fn(model, done)
            history.evals.append({"step": done, **metrics})
            logger.info(f"Stage 1 eval at step {done}: {metrics}")
        if checkpoint_fn and s1.checkpoint_every and done % s1.checkpoint_every == 0 and done < s1.steps:
            checkpoint_fn(stage1_checkpoint(model, state, done))

    final_step = max(start, s1.steps)
    return Stage1Result(model, state, history, stage1_checkpoint(model, state, final_step))
