"""End-to-end fine-tuning: backbone and task head both train"""

import logging
from typing import Optional

from ..config import AppConfig
from ..corpus.dataset import Corpus
from ..model.encoder import VideoEncoder
from ..model.layers import MapHead
from ..model.params import parameter_hash
from .features import clone_encoder
from .probes import AdaptationResult, build_head, predict, split_task, train_head

logger = logging.getLogger(__name__)


def finetune_e2e(
    cfg: AppConfig,
    encoder: VideoEncoder,
    train: Corpus,
    held_out: Corpus,
    seed: int,
    kind: Optional[str] = None,
    task: Optional[str] = None,
    pooler: Optional[MapHead] = None,
    steps: Optional[int] = None,
) -> AdaptationResult:
    """Fine-tune a copy of ``encoder`` with a fresh head; the caller's encoder is untouched

    The head trains on the probe optimizer so it keeps pace with a frozen
    probe; only the backbone uses the smaller fine-tuning rate.
    """
    kind = kind or cfg.probe.kind
    task_name = task or cfg.probe.task
    steps = cfg.finetune.steps if steps is None else steps
    train_task, eval_task = split_task(train, held_out, task_name)
    tuned = clone_encoder(encoder).unfreeze()

    head = build_head(cfg, kind, train_task.num_classes, seed, pooler)
    history = train_head(
        tuned, head, train, train_task, steps, cfg.probe.batch_size, cfg.finetune.optim, seed, "finetune",
        head_optim=cfg.probe.optim,
    )
    metric, value = eval_task.score(predict(tuned, head, held_out, cfg.eval.batch_size))
    logger.info(f"Fine-tuned ({kind} head) on {task_name}: {metric}={value:.3f} after {steps} steps")
    return AdaptationResult(
        task_name, "finetune", metric, value, head, history, parameter_hash(tuned), {"head": kind}, encoder=tuned,
    )
