"""Command-line interface"""

import functools
import sys
from typing import Any, Callable, Dict, Optional, Sequence

import click
from rich.console import Console

from . import main as pipeline
from .config import DEFAULT_CONFIG_PATH, parse_overrides
from .errors import PrismError
from .experiments import AXES
from .reporting import metrics_table

console = Console()


FlagOverrides = Callable[[Dict[str, Any]], Dict[str, Any]]


def common_options(func: Optional[Callable] = None, *, flags: Optional[FlagOverrides] = None) -> Callable:
    """--config, --seed, --output-dir, --log-level, --set and --run for every subcommand

    ``flags`` pops command-specific options from the keyword arguments and
    turns them into config overrides, applied after ``--set``.
    """
    if func is None:
        return functools.partial(common_options, flags=flags)

    @click.option('--config', 'config_path', type=click.Path(exists=True), default=DEFAULT_CONFIG_PATH,
                  help='Path to config file (YAML)')
    @click.option('--seed', type=int, default=None, help='Run seed (overrides the config seed)')
    @click.option('--output-dir', type=click.Path(), default=None,
                  help='Output directory for runs (default: $PRISM_OUTPUT_DIR or ./runs)')
    @click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
                  default=None, help='Logging level (default: $PRISM_LOG_LEVEL or INFO)')
    @click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                  help='Config override, e.g. --set stage2.mask_ratio=0.75 (repeatable)')
    @click.option('--run', 'run_id', default=None, help='Run name (default: the subcommand name)')
    @functools.wraps(func)
    def wrapper(config_path, seed, output_dir, log_level, overrides, run_id, **kwargs):
        command = click.get_current_context().info_name
        try:
            ctx = pipeline.open_run(
                command,
                config_path,
                {**parse_overrides(overrides), **(flags(kwargs) if flags else {})},
                seed,
                output_dir or pipeline.default_output_dir(),
                log_level or pipeline.default_log_level(),
                run_id,
            )
            return func(ctx, **kwargs)
        except PrismError as e:
            click.echo(f"✗ Error: {e}", err=True)
            sys.exit(1)
    return wrapper


corpus_option = click.option(
    '--corpus', 'manifests', multiple=True, type=click.Path(exists=True),
    help='Corpus manifest or directory (repeatable; generated from the config when omitted)',
)


def show_records(title: str, records: Sequence) -> None:
    if records:
        console.print(metrics_table(records, title))


@click.group(no_args_is_help=False, context_settings={'help_option_names': ['-h', '--help']})
def cli():
    """Two-stage video encoder pretraining and evaluation on synthetic corpora.

    Examples:

    # Generate a corpus and pretrain both stages
    python prism.py gen-corpus --seed 0
    python prism.py pretrain-stage1 --seed 0
    python prism.py pretrain-stage2 --teacher runs/pretrain-stage1/checkpoints/stage1.ckpt

    # Frozen probe on the motion task
    python prism.py probe --checkpoint runs/pretrain-stage2/checkpoints/stage2.ckpt --task motion

    # Masking ablation grid
    python prism.py ablate --axis masking
    """


@cli.command('gen-corpus')
@click.option('--out', 'out_dir', type=click.Path(), default=None, help='Corpus directory (default: <run>/corpus)')
@common_options
def gen_corpus(ctx, out_dir: Optional[str]):
    """Generate a synthetic clip corpus with its manifest."""
    manifest = pipeline.run_gen_corpus(ctx, out_dir)
    click.echo(f"✓ Manifest: {manifest}")


@cli.command('stats')
@corpus_option
@click.option('--checkpoint', type=click.Path(exists=True), default=None,
              help='Stage-1 or LiT checkpoint for caption alignment scores')
@click.option('--svg', is_flag=True, default=False, help='Also write SVG histograms')
@common_options
def stats(ctx, manifests, checkpoint, svg):
    """Duration, caption-length and alignment histograms."""
    rows = pipeline.run_stats(ctx, manifests, checkpoint, svg)
    click.echo((ctx.storage.get_reports_dir(ctx.run_id) / "stats.txt").read_text(encoding="utf-8"))
    click.echo(f"✓ {len(rows)} histogram bins")


@cli.command('pretrain-stage1')
@corpus_option
@click.option('--resume', type=click.Path(exists=True), default=None, help='Stage-1 checkpoint to resume from')
@common_options
def pretrain_stage1(ctx, manifests, resume):
    """Video-text contrastive pretraining (Stage 1)."""
    show_records("Stage 1", pipeline.run_stage1(ctx, manifests, resume))


def stage2_flags(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    """Config overrides for the Stage-2 ablation flags"""
    overrides: Dict[str, Any] = {}
    mask = kwargs.pop('mask')
    ratio = kwargs.pop('mask_ratio')
    if mask:
        overrides['stage2.mask_pattern'] = mask
    if ratio is not None:
        overrides['stage2.mask_ratio'] = ratio
    if kwargs.pop('no_shuffle'):
        overrides['stage2.shuffle'] = False
    if kwargs.pop('no_global_distill'):
        overrides['stage2.global_distill'] = False
    return overrides


@cli.command('pretrain-stage2')
@corpus_option
@click.option('--teacher', required=True, type=click.Path(exists=True), help='Stage-1 checkpoint (the teacher)')
@click.option('--resume', type=click.Path(exists=True), default=None, help='Stage-2 checkpoint to resume from')
@click.option('--mask', type=click.Choice(['tube', 'blockwise']), default=None, help='Mask pattern')
@click.option('--mask-ratio', type=float, default=None, help='Fraction of tokens masked')
@click.option('--no-shuffle', is_flag=True, default=False, help='Disable token shuffling')
@click.option('--no-global-distill', is_flag=True, default=False, help='Disable the global distillation loss')
@common_options(flags=stage2_flags)
def pretrain_stage2(ctx, manifests, teacher, resume):
    """Masked video distillation from the Stage-1 teacher (Stage 2)."""
    show_records("Stage 2", pipeline.run_stage2(ctx, teacher, manifests, resume))


@cli.command('lit-tune')
@corpus_option
@click.option('--stage1', 'stage1_path', required=True, type=click.Path(exists=True),
              help='Stage-1 checkpoint (text tower, MAP head, vocabulary)')
@click.option('--encoder', 'encoder_path', type=click.Path(exists=True), default=None,
              help='Checkpoint whose video encoder is locked (default: the Stage-1 encoder)')
@common_options
def lit_tune(ctx, manifests, stage1_path, encoder_path):
    """Tune a text tower against a locked video encoder."""
    show_records("LiT", pipeline.run_lit(ctx, stage1_path, encoder_path, manifests))


def adaptation_command(regime: str, summary: str):
    @cli.command(regime, help=summary)
    @corpus_option
    @click.option('--checkpoint', required=True, type=click.Path(exists=True),
                  help='Stage-1, Stage-2 or LiT checkpoint holding the encoder')
    @click.option('--head', 'kind', type=click.Choice(['map', 'mlap', 'linear-after-map']), default=None,
                  help='Task head (default: probe.kind)')
    @click.option('--task', type=click.Choice(['appearance', 'motion', 'shape', 'color', 'multilabel']),
                  default=None, help='Task (default: probe.task)')
    @click.option('--pooler', 'pooler_path', type=click.Path(exists=True), default=None,
                  help='Checkpoint supplying the pretrained MAP pooler for linear-after-map')
    @common_options
    def command(ctx, manifests, checkpoint, kind, task, pooler_path):
        records = pipeline.run_adaptation(ctx, regime, checkpoint, manifests, kind, task, pooler_path)
        show_records(regime, records)
    return command


adaptation_command('probe', "Frozen-backbone probe (MAP, MLAP or linear-after-MAP head).")
adaptation_command('lora', "Low-rank adapters plus a task head on a frozen backbone.")
adaptation_command('finetune', "End-to-end fine-tuning of backbone and head.")


@cli.command('eval-retrieval')
@corpus_option
@click.option('--checkpoint', required=True, type=click.Path(exists=True), help='Stage-1 or LiT checkpoint')
@common_options
def eval_retrieval(ctx, manifests, checkpoint):
    """Video-text retrieval Recall@k on held-out clips."""
    show_records("Retrieval", pipeline.run_eval_retrieval(ctx, checkpoint, manifests))


@cli.command('eval-zeroshot')
@corpus_option
@click.option('--checkpoint', required=True, type=click.Path(exists=True), help='Stage-1 or LiT checkpoint')
@click.option('--task', 'tasks', multiple=True, type=click.Choice(['appearance', 'motion', 'shape', 'color']),
              help='Task to classify (repeatable; default appearance and motion)')
@common_options
def eval_zeroshot(ctx, manifests, checkpoint, tasks):
    """Zero-shot classification from prompt-template text embeddings."""
    records = pipeline.run_eval_zero_shot(ctx, checkpoint, manifests, tasks or ('appearance', 'motion'))
    show_records("Zero-shot", records)


@cli.command('ablate')
@corpus_option
@click.option('--axis', required=True, type=click.Choice(AXES), help='Which grid to run')
@common_options
def ablate(ctx, manifests, axis):
    """Run an ablation grid and print the comparison table."""
    pipeline.run_ablate(ctx, axis, manifests)
    click.echo((ctx.storage.get_reports_dir(ctx.run_id) / f"ablation_{axis}.txt").read_text(encoding="utf-8"))


@cli.command('report')
@click.option('--from-run', 'runs', multiple=True, help='Run to include (repeatable; default: every run)')
@corpus_option
@click.option('--svg', is_flag=True, default=False, help='Also write SVG histograms for the given corpora')
@common_options
def report(ctx, runs, manifests, svg):
    """Plain-text summary tables of metric records."""
    path = pipeline.run_report(ctx, runs, manifests, svg)
    click.echo(path.read_text(encoding="utf-8"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; returns the process exit code"""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="prism", standalone_mode=True)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    return 0


if __name__ == '__main__':
    sys.exit(main())
