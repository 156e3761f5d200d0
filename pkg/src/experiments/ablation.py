"""Ablation grids over the Stage-2 recipe

Each grid trains a Stage-1 teacher per seed, distils one student per variant
and scores every encoder with frozen MAP probes on the appearance and motion
tasks. The teacher itself is scored too, as the baseline row.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..adaptation.probes import probe_train
from ..config import AppConfig
from ..corpus.dataset import Corpus
from ..errors import ConfigError
from ..model.encoder import VideoEncoder
from ..storage.schemas import MetricRecord
from ..training.contrastive import DualEncoder
from ..training.stage1 import train_stage1
from ..training.stage2 import train_stage2

logger = logging.getLogger(__name__)

AXES = ("masking", "distill", "attention")
PROBE_TASKS = ("appearance", "motion")
TEACHER_VARIANT = "stage1-teacher"


@dataclass(frozen=True)
class AblationVariant:
    """One grid cell: a name plus the dotted config overrides it applies"""
    name: str
    overrides: Tuple[Tuple[str, Any], ...]

    def apply(self, cfg: AppConfig) -> AppConfig:
        return cfg.replace(**dict(self.overrides)) if self.overrides else cfg


@dataclass
class AblationRow:
    variant: str
    scores: Dict[str, List[float]] = field(default_factory=dict)

    def mean(self, task: str) -> float:
        values = self.scores.get(task, [])
        return float(np.mean(values)) if values else float("nan")


@dataclass
class AblationResult:
    axis: str
    seeds: Tuple[int, ...]
    rows: List[AblationRow]
    records: List[MetricRecord]

    def row(self, variant: str) -> AblationRow:
        for row in self.rows:
            if row.variant == variant:
                return row
        raise KeyError(variant)


def ablation_variants(cfg: AppConfig, axis: str) -> List[AblationVariant]:
    """Grid cells for ``axis``

    Raises:
        ConfigError: Unknown axis
    """
    if axis == "masking":
        return [
            AblationVariant(
                f"{pattern}@{ratio:g}",
                (("stage2.mask_pattern", pattern), ("stage2.mask_ratio", float(ratio))),
            )
            for pattern in cfg.ablation.mask_patterns
            for ratio in cfg.ablation.mask_ratios
        ]
    if axis == "distill":
        return [
            AblationVariant("full", ()),
            AblationVariant("no-shuffle", (("stage2.shuffle", False),)),
            AblationVariant("no-global", (("stage2.global_distill", False),)),
        ]
    if axis == "attention":
        return [
            AblationVariant("factorized", (("encoder.attention", "factorized"),)),
            AblationVariant("joint", (("encoder.attention", "joint"),)),
        ]
    raise ConfigError(f"unknown ablation axis '{axis}' (expected one of {', '.join(AXES)})")


def _grid_config(cfg: AppConfig) -> AppConfig:
    ab = cfg.ablation
    return cfg.replace(**{
        "stage1.steps": ab.stage1_steps,
        "stage1.eval_every": 0,
        "stage1.checkpoint_every": 0,
        "stage2.steps": ab.stage2_steps,
        "stage2.eval_every": 0,
        "stage2.checkpoint_every": 0,
        "probe.kind": "map",
    })


def _probe_scores(
    cfg: AppConfig,
    encoder: VideoEncoder,
    train: Corpus,
    held_out: Corpus,
    seed: int,
) -> Dict[str, float]:
    return {
        task: probe_train(cfg, encoder, train, held_out, seed, kind="map", task=task, steps=cfg.ablation.probe_steps).value
        for task in PROBE_TASKS
    }


def run_ablation(
    cfg: AppConfig,
    axis: str,
    train: Corpus,
    held_out: Corpus,
    seeds: Optional[Sequence[int]] = None,
) -> AblationResult:
    """Run one ablation grid

    Args:
        cfg: Base configuration; ``ablation`` sets steps, seeds and grid values
        axis: ``masking``, ``distill`` or ``attention``
        train: Corpus for pretraining and probe training
        held_out: Corpus the probes are scored on
        seeds: Seeds to average over (defaults to ``ablation.seeds``)

    Returns:
        One row per variant plus the teacher baseline, and the metric records
    """
    variants = ablation_variants(cfg, axis)
    seeds = tuple(seeds if seeds is not None else cfg.ablation.seeds)
    base = _grid_config(cfg)
    # Attention variants change the architecture, so each needs its own teacher
    per_variant_teacher = axis == "attention"

    rows: Dict[str, AblationRow] = {}
    records: List[MetricRecord] = []

    def record(variant: str, seed: int, scores: Dict[str, float], step: int) -> None:
        row = rows.setdefault(variant, AblationRow(variant))
        for task, value in scores.items():
            row.scores.setdefault(task, []).append(value)
            records.append(MetricRecord(task, "frozen", "accuracy", value, seed, step, {"axis": axis, "variant": variant}))

    logger.info(f"Ablation '{axis}': {len(variants)} variants x {len(seeds)} seeds")
    for seed in seeds:
        shared: Optional[DualEncoder] = None
        if not per_variant_teacher:
            shared = train_stage1(base, [train], seed).model
            record(TEACHER_VARIANT, seed, _probe_scores(base, shared.video, train, held_out, seed), base.stage1.steps)

        for variant in variants:
            vcfg = variant.apply(base)
            teacher = shared
            if teacher is None:
                teacher = train_stage1(vcfg, [train], seed).model
                record(
                    f"{TEACHER_VARIANT}/{variant.name}", seed,
                    _probe_scores(vcfg, teacher.video, train, held_out, seed), vcfg.stage1.steps,
                )
            student = train_stage2(vcfg, teacher, train, seed).model.student
            scores = _probe_scores(vcfg, student, train, held_out, seed)
            record(variant.name, seed, scores, vcfg.stage2.steps)
            logger.info(f"  ✓ {axis}/{variant.name} seed {seed}: {scores}")

    return AblationResult(axis, seeds, list(rows.values()), records)
