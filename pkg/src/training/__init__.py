"""Two-stage pretraining: video-text contrastive learning, then masked distillation"""

from .agd import AgdSchedule, agd_next_batch
from .common import StepResult, TrainHistory, make_optimizer, make_schedule
from .contrastive import ContrastiveHead, DualEncoder, similarity_logits, symmetric_ce_loss
from .distill import (
    DistillTargets,
    Stage2Loss,
    Stage2Model,
    cosine_distance_loss,
    encode_visible,
    stage2_loss,
    teacher_targets,
)
from .stage1 import Stage1Result, build_vocabulary, stage1_checkpoint, stage1_step, train_stage1
from .stage2 import (
    Stage2Result,
    eval_token_similarity,
    sample_batch_masks,
    stage2_checkpoint,
    stage2_step,
    student_encoder_state,
    train_stage2,
)

__all__ = [
    "AgdSchedule",
    "agd_next_batch",
    "StepResult",
    "TrainHistory",
    "make_optimizer",
    "make_schedule",
    "ContrastiveHead",
    "DualEncoder",
    "similarity_logits",
    "symmetric_ce_loss",
    "DistillTargets",
    "Stage2Loss",
    "Stage2Model",
    "cosine_distance_loss",
    "encode_visible",
    "stage2_loss",
    "teacher_targets",
    "Stage1Result",
    "build_vocabulary",
    "stage1_checkpoint",
    "stage1_step",
    "train_stage1",
    "Stage2Result",
    "eval_token_similarity",
    "sample_batch_masks",
    "stage2_checkpoint",
    "stage2_step",
    "student_encoder_state",
    "train_stage2",
]
