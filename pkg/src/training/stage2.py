"""Stage 2: masked distillation from the frozen Stage-1 model

The student starts as a copy of the teacher's video encoder. Each step
samples one mask per clip (blockwise by default), computes teacher targets on
the intact clips and updates the student and both decoders. The decoders are
flagged as discardable in the checkpoint; only the student is needed
downstream.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from ..autograd.optim import OptimizerState
from ..autograd.schedule import LrSchedule
from ..autograd.tensor import no_grad
from ..config import AppConfig
from ..corpus.dataset import Batch, Corpus
from ..errors import CheckpointError, FrozenParametersError
from ..masking import MaskSpec, sample_mask
from ..model.params import parameter_hash
from ..rng import derive_rng, derive_seed
from ..storage.checkpoint import Checkpoint
from .common import StepResult, TrainHistory, check_finite, log_step, make_optimizer, make_schedule, optimizer_step
from .contrastive import DualEncoder
from .distill import Stage2Model, stage2_loss, teacher_targets

logger = logging.getLogger(__name__)

EvalFn = Callable[[Stage2Model, int], Dict[str, float]]
CheckpointFn = Callable[[Checkpoint], None]


def sample_batch_masks(cfg: AppConfig, batch_size: int, seed: int, *purpose) -> List[MaskSpec]:
    enc = cfg.encoder
    s2 = cfg.stage2
    return [
        sample_mask(
            s2.mask_pattern, enc.frames, enc.grid_h, enc.grid_w, s2.mask_ratio,
            derive_seed(seed, *purpose, i), cfg.masking,
        )
        for i in range(batch_size)
    ]


def stage2_step(
    model: Stage2Model,
    teacher: DualEncoder,
    batch: Batch,
    state: OptimizerState,
    schedule: LrSchedule,
    step: int,
    seed: int,
) -> StepResult:
    cfg = model.cfg
    masks = sample_batch_masks(cfg, len(batch), seed, "stage2", "mask", step)
    targets = teacher_targets(batch.pixels, teacher, pre_norm=cfg.stage2.target_pre_norm)
    shuffle_rng = derive_rng(seed, "stage2", "shuffle", step)
    losses = stage2_loss(batch.pixels, model, masks, targets, shuffle_rng, cfg.stage2)
    value = check_finite(losses.total, step, "stage2", batch.corpus)
    lr = optimizer_step(losses.total, model.trainable_parameters(), state, schedule, step)
    return StepResult(step, value, lr, batch.corpus, dict(losses.parts))


def stage2_checkpoint(
    model: Stage2Model,
    state: OptimizerState,
    step: int,
    teacher_hash: str,
    last_mask: Optional[MaskSpec] = None,
) -> Checkpoint:
    params = model.state_dict()
    meta = {"discardable": list(Stage2Model.DISCARDABLE), "teacher_hash": teacher_hash}
    if last_mask is not None:
        meta["last_mask"] = last_mask.to_dict()
    return Checkpoint(kind="stage2", step=step, params=params, optimizer=state, config=model.cfg.snapshot(), meta=meta)


def eval_token_similarity(
    model: Stage2Model,
    teacher: DualEncoder,
    corpus: Corpus,
    seed: int,
    batch_size: int = 16,
) -> float:
    """Mean cosine similarity between decoder predictions and teacher tokens on fixed masks"""
    cfg = model.cfg
    eval_cfg = cfg.stage2.model_copy(update={"shuffle": False, "global_distill": False, "masked_only": False})
    total, count = 0.0, 0
    with no_grad():
        for i, batch in enumerate(corpus.iter_batches(batch_size)):
            masks = sample_batch_masks(cfg, len(batch), seed, "stage2", "eval-mask", i)
            targets = teacher_targets(batch.pixels, teacher, pre_norm=cfg.stage2.target_pre_norm)
            losses = stage2_loss(batch.pixels, model, masks, targets, derive_rng(seed, "eval"), eval_cfg)
            total += (1.0 - float(losses.token.data)) * len(batch)
            count += len(batch)
    return total / max(count, 1)


@dataclass
class Stage2Result:
    model: Stage2Model
    optimizer: OptimizerState
    history: TrainHistory
    checkpoint: Checkpoint


def train_stage2(
    cfg: AppConfig,
    teacher: DualEncoder,
    corpus: Corpus,
    seed: int,
    resume: Optional[Checkpoint] = None,
    eval_fn: Optional[EvalFn] = None,
    checkpoint_fn: Optional[CheckpointFn] = None,
) -> Stage2Result:
    """Distil ``teacher`` into a student encoder on a video-only corpus

    Raises:
        TrainingDivergedError: Loss became NaN/inf
        CheckpointError: ``resume`` was trained against a different teacher
    """
    s2 = cfg.stage2
    if corpus.kind != "video":
        logger.warning(f"Stage 2 corpus '{corpus.name}' holds images; masking runs over a single frame")
    teacher.freeze()
    teacher_hash = parameter_hash(teacher)

    model = Stage2Model(cfg, derive_rng(seed, "init", "stage2"))
    model.init_from_teacher(teacher)
    state = make_optimizer(s2.optim, model.trainable_parameters())
    start = 0
    if resume is not None:
        if resume.meta.get("teacher_hash") != teacher_hash:
            raise CheckpointError("stage 2 checkpoint was trained against a different teacher")
        model.load_state_dict(resume.params)
        state = resume.optimizer or state
        start = resume.step
        logger.info(f"Resuming stage 2 from step {start}")

    schedule = make_schedule(s2.optim, s2.steps)
    history = TrainHistory()
    logger.info(
        f"Stage 2: {s2.steps} steps, batch {s2.batch_size}, {s2.mask_pattern} masks at {s2.mask_ratio}, "
        f"shuffle={s2.shuffle}, global_distill={s2.global_distill}"
    )

    for step in range(start, s2.steps):
        batch = corpus.batch(step, s2.batch_size, seed)
        result = stage2_step(model, teacher, batch, state, schedule, step, seed)
        history.steps.append(result)
        log_step("stage2", result)

        done = step + 1
        if eval_fn and s2.eval_every and done % s2.eval_every == 0:
            metrics = eval_fn(model, done)
            history.evals.append({"step": done, **metrics})
            logger.info(f"Stage 2 eval at step {done}: {metrics}")
        if checkpoint_fn and s2.checkpoint_every and done % s2.checkpoint_every == 0 and done < s2.steps:
            checkpoint_fn(stage2_checkpoint(model, state, done, teacher_hash))

    if parameter_hash(teacher) != teacher_hash:
        raise FrozenParametersError("teacher", "stage 2")
    final_step = max(start, s2.steps)
    example = sample_batch_masks(cfg, 1, seed, "stage2", "mask", max(final_step - 1, 0))[0]
    return Stage2Result(model, state, history, stage2_checkpoint(model, state, final_step, teacher_hash, example))


def student_encoder_state(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    """Encoder weights from a stage-1 (``video.``) or stage-2 (``student.``) checkpoint"""
    prefix = "student." if ckpt.kind == "stage2" else "video."
    state = ckpt.subset(prefix)
    if not state:
        raise CheckpointError(f"{ckpt.kind} checkpoint holds no '{prefix}' parameters")
    return state
