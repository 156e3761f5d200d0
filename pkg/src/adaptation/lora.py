"""Low-rank adapters on a frozen encoder

Adapters attach to the attention projections and MLP layers of every encoder
block. Their up-projection starts at zero, so an adapted encoder computes
exactly what the frozen one does until training moves it.
"""

import logging
from typing import Dict, List, Optional

import numpy as np

from ..config import AppConfig
from ..corpus.dataset import Corpus
from ..errors import FrozenParametersError
from ..model.encoder import VideoEncoder
from ..model.layers import Linear, MapHead
from ..model.params import parameter_hash
from ..rng import derive_rng
from .features import clone_encoder, encode_corpus
from .probes import AdaptationResult, build_head, head_taps, predict, split_task, train_head

logger = logging.getLogger(__name__)

LORA_TARGETS = ("q_proj", "k_proj", "v_proj", "out_proj", "fc1", "fc2")


def adapted_layers(encoder: VideoEncoder) -> Dict[str, Linear]:
    """Block-level linears that take adapters (patch embedding and norms excluded)"""
    return {
        name: module
        for name, module in encoder.named_modules()
        if isinstance(module, Linear) and ".blocks." in f".{name}" and name.rsplit(".", 1)[-1] in LORA_TARGETS
    }


def lora_inject(encoder: VideoEncoder, rank: int, alpha: float, rng: np.random.Generator) -> List[str]:
    """Freeze ``encoder`` and attach adapters; only adapter weights stay trainable

    Raises:
        ConfigError: ``rank`` is outside [1, min(d_in, d_out)] for some layer
    """
    encoder.freeze()
    layers = adapted_layers(encoder)
    for name in sorted(layers):
        layers[name].attach_lora(rank, alpha, rng)
    logger.info(f"Attached rank-{rank} adapters to {len(layers)} layers ({lora_parameter_count(encoder)} parameters)")
    return sorted(layers)


def remove_lora(encoder: VideoEncoder) -> None:
    for layer in adapted_layers(encoder).values():
        layer.detach_lora()


def lora_parameter_count(encoder: VideoEncoder) -> int:
    return sum(
        layer.lora_down.shape[1] * (layer.d_in + layer.d_out)
        for layer in adapted_layers(encoder).values() if layer.has_lora
    )


def backbone_hash(encoder: VideoEncoder) -> str:
    """Hash of the pretrained weights only (adapter tensors excluded)"""
    return parameter_hash({name: p for name, p in encoder.named_parameters() if "lora_" not in name})


def lora_train(
    cfg: AppConfig,
    encoder: VideoEncoder,
    train: Corpus,
    held_out: Corpus,
    seed: int,
    kind: Optional[str] = None,
    task: Optional[str] = None,
    pooler: Optional[MapHead] = None,
) -> AdaptationResult:
    """Train adapters plus a task head on a copy of ``encoder``

    Raises:
        FrozenParametersError: A pretrained weight moved during training
    """
    kind = kind or cfg.probe.kind
    task_name = task or cfg.probe.task
    train_task, eval_task = split_task(train, held_out, task_name)
    adapted = clone_encoder(encoder)
    lora_inject(adapted, cfg.lora.rank, cfg.lora.alpha, derive_rng(seed, "init", "lora"))
    before = backbone_hash(adapted)

    head = build_head(cfg, kind, train_task.num_classes, seed, pooler)
    history = train_head(
        adapted, head, train, train_task, cfg.lora.steps, cfg.probe.batch_size, cfg.lora.optim, seed, "lora",
    )
    bs = cfg.eval.batch_size
    features = encode_corpus(adapted, held_out, bs, head_taps(adapted, head))
    metric, value = eval_task.score(predict(adapted, head, held_out, bs, features))

    after = backbone_hash(adapted)
    if after != before:
        raise FrozenParametersError("backbone", "LoRA training")
    logger.info(f"LoRA ({kind} head) on {task_name}: {metric}={value:.3f} after {cfg.lora.steps} steps")
    return AdaptationResult(task_name, "lora", metric, value, head, history, after, {"head": kind}, encoder=adapted)
