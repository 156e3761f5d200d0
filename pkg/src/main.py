"""Orchestration behind every CLI subcommand

Each ``run_*`` function takes a :class:`RunContext`, does its work, writes
checkpoints and metric records into the run directory and returns the metric
records. Metric rows and checkpoints depend only on config, seed and inputs;
wall-clock data lives in ``run_metadata.json`` and the log file only.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from .adaptation import (
    embed_texts,
    embed_videos,
    evaluate_retrieval,
    evaluate_zero_shot,
    finetune_e2e,
    lit_tune,
    lora_train,
    probe_train,
    segment_retrieval_eval,
)
from .config import AppConfig, load_config, validate_config
from .corpus import Corpus, corpus_stats, gen_corpus
from .errors import CheckpointError, ConfigError, CorpusError
from .experiments import run_ablation
from .logging_setup import setup_logging
from .model.encoder import VideoEncoder
from .model.layers import MapHead
from .reporting import ReportGenerator, comparison_table, render
from .rng import derive_rng
from .storage import Checkpoint, MetricRecord, RunStatus, RunStorage, load_checkpoint, save_checkpoint
from .training import DualEncoder, eval_token_similarity, student_encoder_state, train_stage1, train_stage2

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "./runs"


def default_output_dir() -> str:
    return os.getenv("PRISM_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)


def default_log_level() -> str:
    return os.getenv("PRISM_LOG_LEVEL", "INFO")


@dataclass
class RunContext:
    """Everything a subcommand needs: config, seed and where to write"""
    cfg: AppConfig
    seed: int
    storage: RunStorage
    run_id: str

    @property
    def run_dir(self) -> Path:
        return self.storage.get_run_dir(self.run_id)

    def save(self, ckpt: Checkpoint, name: str) -> Path:
        path = self.storage.checkpoint_path(self.run_id, name)
        save_checkpoint(ckpt, path)
        return path


def open_run(
    command: str,
    config_path: Optional[str],
    overrides: Dict[str, object],
    seed: Optional[int],
    output_dir: str,
    log_level: str,
    run_id: Optional[str] = None,
) -> RunContext:
    """Load config, set up logging and start the run directory"""
    cfg = load_config(config_path, overrides)
    seed = cfg.seed if seed is None else seed
    if seed != cfg.seed:
        cfg = cfg.replace(seed=seed)
    storage = RunStorage(output_dir)
    run_id = run_id or command
    setup_logging(log_level, str(storage.get_run_dir(run_id)))
    storage.start_run(run_id, command, seed, cfg.snapshot())
    logger.info("=" * 80)
    logger.info(f"{command}: run '{run_id}', seed {seed}, output {storage.get_run_dir(run_id)}")
    logger.info("=" * 80)
    return RunContext(cfg, seed, storage, run_id)


def execute(ctx: RunContext, stage: str, work: Callable[[RunContext], List[MetricRecord]]) -> List[MetricRecord]:
    """Run ``work``, persist its metric records and keep run metadata current"""
    try:
        records = work(ctx)
    except Exception as exc:
        ctx.storage.add_failed_stage(ctx.run_id, stage)
        ctx.storage.update_run_status(ctx.run_id, RunStatus.FAILED, str(exc))
        logger.error(f"✗ {stage} failed: {exc}")
        raise
    ctx.storage.append_metrics(ctx.run_id, records)
    ctx.storage.add_completed_stage(ctx.run_id, stage)
    ctx.storage.update_run_status(ctx.run_id, RunStatus.COMPLETED)
    logger.info(f"✓ {stage} complete: {len(records)} metric records")
    return records


# Corpora


def generated_corpora(cfg: AppConfig, seed: int) -> Tuple[Corpus, Corpus]:
    """(train, held-out) generated in memory from ``cfg.corpus``

    The held-out part is regenerated at ``eval.frames`` when that differs
    from the pretraining clip length.
    """
    spec = cfg.corpus
    corpus = Corpus.from_spec(spec, seed)
    train, held_out = corpus.split(min(spec.holdout, len(corpus)))
    if cfg.eval.frames and cfg.eval.frames != spec.frames:
        longer = Corpus.from_spec(spec.model_copy(update={"frames": cfg.eval.frames}), seed)
        _, held_out = longer.split(min(spec.holdout, len(longer)))
        logger.info(f"Held-out clips regenerated at {cfg.eval.frames} frames")
    return train, held_out


def load_corpora(cfg: AppConfig, seed: int, manifests: Sequence[str] = ()) -> Tuple[List[Corpus], Corpus]:
    """Training corpora and the held-out corpus

    With manifests, the first one supplies the held-out split and every
    other manifest is used whole for training. Without, one corpus is
    generated from ``cfg.corpus``.
    """
    if not manifests:
        train, held_out = generated_corpora(cfg, seed)
        return [train], held_out
    loaded = [Corpus.from_manifest(_manifest_path(m)) for m in manifests]
    first, held_out = loaded[0].split(min(cfg.corpus.holdout, len(loaded[0])))
    return [first] + loaded[1:], held_out


def _manifest_path(path: str) -> Path:
    path = Path(path)
    return path / "manifest.jsonl" if path.is_dir() else path


# Checkpoint helpers


def adopt_architecture(cfg: AppConfig, ckpt: Checkpoint) -> AppConfig:
    """Run config with the network geometry a checkpoint was trained with"""
    trained = validate_config(ckpt.config) if ckpt.config else cfg
    return cfg.model_copy(update={
        "encoder": trained.encoder,
        "text": trained.text,
        "stage1": cfg.stage1.model_copy(update={"proj_dim": trained.stage1.proj_dim}),
    })


def encoder_from_checkpoint(cfg: AppConfig, ckpt: Checkpoint) -> VideoEncoder:
    encoder = VideoEncoder(cfg.encoder, derive_rng(0, "restore"))
    encoder.load_state_dict(student_encoder_state(ckpt))
    return encoder


def dual_encoder_from_checkpoint(cfg: AppConfig, ckpt: Checkpoint) -> DualEncoder:
    if "vocab" not in ckpt.meta:
        raise CheckpointError(f"{ckpt.kind} checkpoint has no text tower (need stage1 or lit)")
    return DualEncoder.from_checkpoint(ckpt, cfg)


def pooler_from_checkpoint(cfg: AppConfig, path: Optional[str]) -> Optional[MapHead]:
    if not path:
        return None
    ckpt = load_checkpoint(path)
    return dual_encoder_from_checkpoint(adopt_architecture(cfg, ckpt), ckpt).head.map_head


def alignment_scorer(model: DualEncoder, corpus: Corpus, batch_size: int):
    """Cosine similarity of each clip with its own caption"""
    def score(records) -> np.ndarray:
        video = embed_videos(model, corpus, batch_size)
        text = embed_texts(model, [r.caption for r in records], batch_size)
        return np.sum(video * text, axis=1)
    return score


# Subcommands


def run_gen_corpus(ctx: RunContext, out_dir: Optional[str] = None) -> Path:
    out_dir = out_dir or str(ctx.run_dir / "corpus")
    manifest = gen_corpus(ctx.cfg.corpus, out_dir, ctx.seed)
    ctx.storage.add_completed_stage(ctx.run_id, "gen-corpus")
    ctx.storage.update_run_status(ctx.run_id, RunStatus.COMPLETED)
    return manifest


def run_stats(
    ctx: RunContext,
    manifests: Sequence[str],
    checkpoint: Optional[str] = None,
    svg: bool = False,
) -> List[Dict[str, object]]:
    """Corpus histograms; alignment scores need a stage-1 or LiT checkpoint"""
    model = None
    if checkpoint:
        ckpt = load_checkpoint(checkpoint)
        model = dual_encoder_from_checkpoint(adopt_architecture(ctx.cfg, ckpt), ckpt)
    corpora = [Corpus.from_manifest(_manifest_path(m)) for m in manifests] if manifests else [
        Corpus.from_spec(ctx.cfg.corpus, ctx.seed)
    ]

    all_stats = []
    for corpus in corpora:
        scorer = alignment_scorer(model, corpus, ctx.cfg.eval.batch_size) if model is not None else None
        all_stats.append(corpus_stats(corpus.records, corpus.name, scorer))

    rows = [row for stats in all_stats for row in stats.to_records()]
    reports = ReportGenerator(str(ctx.storage.get_reports_dir(ctx.run_id)))
    text, _ = reports.stats_report(all_stats, svg=svg)
    reports.write("stats.txt", text)
    _write_jsonl(ctx.run_dir / "stats.jsonl", rows)
    ctx.storage.add_completed_stage(ctx.run_id, "stats")
    ctx.storage.update_run_status(ctx.run_id, RunStatus.COMPLETED)
    return rows


def run_stage1(ctx: RunContext, manifests: Sequence[str] = (), resume: Optional[str] = None) -> List[MetricRecord]:
    def work(ctx: RunContext) -> List[MetricRecord]:
        cfg = ctx.cfg
        corpora, held_out = load_corpora(cfg, ctx.seed, manifests)
        gallery = cfg.eval.gallery_size

        def eval_fn(model: DualEncoder, step: int) -> Dict[str, float]:
            if not len(held_out):
                return {}
            return evaluate_retrieval(model, held_out, gallery, cfg.eval.batch_size).metrics()

        result = train_stage1(
            cfg, corpora, ctx.seed,
            resume=load_checkpoint(resume) if resume else None,
            eval_fn=eval_fn,
            checkpoint_fn=lambda ckpt: ctx.save(ckpt, f"stage1-step{ckpt.step}"),
        )
        ctx.save(result.checkpoint, "stage1")
        step = result.checkpoint.step
        records = [MetricRecord("stage1", "pretrain", "loss", _last_loss(result.history), ctx.seed, step)]
        if len(held_out):
            retrieval = evaluate_retrieval(result.model, held_out, gallery, cfg.eval.batch_size)
            records += retrieval.to_records("retrieval", "pretrain", ctx.seed, step)
        return records

    return execute(ctx, "pretrain-stage1", work)


def run_stage2(
    ctx: RunContext,
    teacher_path: str,
    manifests: Sequence[str] = (),
    resume: Optional[str] = None,
) -> List[MetricRecord]:
    def work(ctx: RunContext) -> List[MetricRecord]:
        teacher_ckpt = load_checkpoint(teacher_path)
        cfg = adopt_architecture(ctx.cfg, teacher_ckpt)
        teacher = dual_encoder_from_checkpoint(cfg, teacher_ckpt)
        corpora, held_out = load_corpora(cfg, ctx.seed, manifests)
        videos = [c for c in corpora if c.kind == "video"] or corpora

        def eval_fn(model, step: int) -> Dict[str, float]:
            if not len(held_out):
                return {}
            return {"token_similarity": eval_token_similarity(model, teacher, held_out, ctx.seed)}

        result = train_stage2(
            cfg, teacher, videos[0], ctx.seed,
            resume=load_checkpoint(resume) if resume else None,
            eval_fn=eval_fn,
            checkpoint_fn=lambda ckpt: ctx.save(ckpt, f"stage2-step{ckpt.step}"),
        )
        ctx.save(result.checkpoint, "stage2")
        step = result.checkpoint.step
        records = [MetricRecord("stage2", "pretrain", "loss", _last_loss(result.history), ctx.seed, step)]
        if len(held_out):
            similarity = eval_token_similarity(result.model, teacher, held_out, ctx.seed)
            records.append(MetricRecord("stage2", "pretrain", "token_similarity", similarity, ctx.seed, step))
        return records

    return execute(ctx, "pretrain-stage2", work)


def run_lit(
    ctx: RunContext,
    stage1_path: str,
    encoder_path: Optional[str] = None,
    manifests: Sequence[str] = (),
) -> List[MetricRecord]:
    """LiT-tune the text tower against a locked encoder (stage-2 student by default when given)"""
    def work(ctx: RunContext) -> List[MetricRecord]:
        stage1_ckpt = load_checkpoint(stage1_path)
        cfg = adopt_architecture(ctx.cfg, stage1_ckpt)
        stage1 = dual_encoder_from_checkpoint(cfg, stage1_ckpt)
        encoder_state = student_encoder_state(load_checkpoint(encoder_path) if encoder_path else stage1_ckpt)
        corpora, held_out = load_corpora(cfg, ctx.seed, manifests)
        gallery = cfg.eval.gallery_size

        result = lit_tune(cfg, stage1, encoder_state, corpora, ctx.seed)
        ctx.save(result.checkpoint, "lit")
        records = [MetricRecord("lit", "pretrain", "loss", _last_loss(result.history), ctx.seed, cfg.lit.steps)]
        if len(held_out):
            retrieval = evaluate_retrieval(result.model, held_out, gallery, cfg.eval.batch_size)
            records += retrieval.to_records("retrieval", "zero-shot", ctx.seed, cfg.lit.steps)
        return records

    return execute(ctx, "lit-tune", work)


def run_adaptation(
    ctx: RunContext,
    regime: str,
    checkpoint: str,
    manifests: Sequence[str] = (),
    kind: Optional[str] = None,
    task: Optional[str] = None,
    pooler_path: Optional[str] = None,
) -> List[MetricRecord]:
    """Frozen probe, LoRA or end-to-end fine-tuning on a pretrained encoder"""
    trainers = {"probe": probe_train, "lora": lora_train, "finetune": finetune_e2e}
    if regime not in trainers:
        raise ConfigError(f"unknown adaptation regime '{regime}'")

    def work(ctx: RunContext) -> List[MetricRecord]:
        ckpt = load_checkpoint(checkpoint)
        cfg = adopt_architecture(ctx.cfg, ckpt)
        encoder = encoder_from_checkpoint(cfg, ckpt)
        corpora, held_out = load_corpora(cfg, ctx.seed, manifests)
        if not len(held_out):
            raise CorpusError("adaptation needs held-out clips (corpus.holdout > 0)")
        head_kind = kind or cfg.probe.kind
        pooler = pooler_from_checkpoint(cfg, pooler_path or (checkpoint if head_kind == "linear-after-map" else None))
        result = trainers[regime](cfg, encoder, corpora[0], held_out, ctx.seed, kind=head_kind, task=task, pooler=pooler)
        return result.to_records(ctx.seed)

    return execute(ctx, regime, work)


def run_eval_retrieval(ctx: RunContext, checkpoint: str, manifests: Sequence[str] = ()) -> List[MetricRecord]:
    def work(ctx: RunContext) -> List[MetricRecord]:
        ckpt = load_checkpoint(checkpoint)
        cfg = adopt_architecture(ctx.cfg, ckpt)
        model = dual_encoder_from_checkpoint(cfg, ckpt)
        _, held_out = load_corpora(cfg, ctx.seed, manifests)
        if not len(held_out):
            raise CorpusError("retrieval needs held-out clips (corpus.holdout > 0)")
        records = evaluate_retrieval(model, held_out, cfg.eval.gallery_size, cfg.eval.batch_size).to_records(
            "retrieval", "zero-shot", ctx.seed, ckpt.step,
        )
        if held_out.records[0].segment_captions:
            accuracy = segment_retrieval_eval(model, held_out, cfg.eval.batch_size)
            records.append(MetricRecord("segment-retrieval", "zero-shot", "accuracy", accuracy, ctx.seed, ckpt.step))
        return records

    return execute(ctx, "eval-retrieval", work)


def run_eval_zero_shot(
    ctx: RunContext,
    checkpoint: str,
    manifests: Sequence[str] = (),
    tasks: Sequence[str] = ("appearance", "motion"),
) -> List[MetricRecord]:
    def work(ctx: RunContext) -> List[MetricRecord]:
        ckpt = load_checkpoint(checkpoint)
        cfg = adopt_architecture(ctx.cfg, ckpt)
        model = dual_encoder_from_checkpoint(cfg, ckpt)
        _, held_out = load_corpora(cfg, ctx.seed, manifests)
        if not len(held_out):
            raise CorpusError("zero-shot evaluation needs held-out clips (corpus.holdout > 0)")
        return [
            MetricRecord(
                task, "zero-shot", "accuracy",
                evaluate_zero_shot(model, held_out, task, cfg.eval.templates, cfg.eval.batch_size),
                ctx.seed, ckpt.step, {"templates": len(cfg.eval.templates)},
            )
            for task in tasks
        ]

    return execute(ctx, "eval-zeroshot", work)


def run_ablate(ctx: RunContext, axis: str, manifests: Sequence[str] = ()) -> List[MetricRecord]:
    def work(ctx: RunContext) -> List[MetricRecord]:
        corpora, held_out = load_corpora(ctx.cfg, ctx.seed, manifests)
        result = run_ablation(ctx.cfg, axis, corpora[0], held_out)
        table = comparison_table(result.records, "variant", title=f"Ablation: {axis} (frozen MAP probe accuracy)")
        ctx.storage.save_report(ctx.run_id, f"ablation_{axis}.txt", render(table))
        return result.records

    return execute(ctx, f"ablate-{axis}", work)


def run_report(
    ctx: RunContext,
    runs: Sequence[str] = (),
    manifests: Sequence[str] = (),
    svg: bool = False,
) -> Path:
    """Summarise metric records of finished runs (all runs when none named)"""
    names = list(runs) or sorted(
        m.run_id for m in ctx.storage.list_runs() if m.run_id != ctx.run_id
    )
    records: List[MetricRecord] = []
    for name in names:
        if not ctx.storage.run_exists(name):
            raise ConfigError(f"no run named '{name}' under {ctx.storage.base_dir}")
        records.extend(ctx.storage.load_metrics(name))
    stats = [corpus_stats(c.records, c.name) for c in (Corpus.from_manifest(_manifest_path(m)) for m in manifests)]
    reports = ReportGenerator(str(ctx.storage.get_reports_dir(ctx.run_id)))
    path = reports.generate(records, stats, svg=svg)
    ctx.storage.add_completed_stage(ctx.run_id, "report")
    ctx.storage.update_run_status(ctx.run_id, RunStatus.COMPLETED)
    return path


def _last_loss(history) -> float:
    losses = history.losses
    return float(losses[-1]) if losses else float("nan")


def _write_jsonl(path: Path, rows: Sequence[Dict[str, object]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
