"""Downstream use of a pretrained encoder: LiT, zero-shot, probes, adapters, fine-tuning"""

from .features import FeatureSet, clone_encoder, embed_texts, embed_videos, encode_corpus, forward_features
from .finetune import finetune_e2e
from .lit import LitResult, lit_checkpoint, lit_tune, locked_model
from .lora import adapted_layers, backbone_hash, lora_inject, lora_parameter_count, lora_train, remove_lora
from .metrics import accuracy, average_precision, mean_average_precision, stratified_average
from .probes import AdaptationResult, ProbeHead, TaskData, build_head, probe_train, split_task, task_labels
from .retrieval import (
    RetrievalResult,
    evaluate_retrieval,
    gallery_retrieval,
    match_ranks,
    retrieval_eval,
    segment_retrieval_eval,
)
from .zero_shot import ZeroShotResult, class_phrase, evaluate_zero_shot, prompt_texts, zero_shot_classify

__all__ = [
    "FeatureSet",
    "clone_encoder",
    "embed_texts",
    "embed_videos",
    "encode_corpus",
    "forward_features",
    "finetune_e2e",
    "LitResult",
    "lit_checkpoint",
    "lit_tune",
    "locked_model",
    "adapted_layers",
    "backbone_hash",
    "lora_inject",
    "lora_parameter_count",
    "lora_train",
    "remove_lora",
    "accuracy",
    "average_precision",
    "mean_average_precision",
    "stratified_average",
    "AdaptationResult",
    "ProbeHead",
    "TaskData",
    "build_head",
    "probe_train",
    "split_task",
    "task_labels",
    "RetrievalResult",
    "evaluate_retrieval",
    "gallery_retrieval",
    "match_ranks",
    "retrieval_eval",
    "segment_retrieval_eval",
    "ZeroShotResult",
    "class_phrase",
    "evaluate_zero_shot",
    "prompt_texts",
    "zero_shot_classify",
]
