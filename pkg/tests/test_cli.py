"""End-to-end tests for the command-line interface at toy scale"""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from src.cli import cli, main
from src.storage import RunStatus, RunStorage


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, toy_cli_args, output_dir, *args):
    result = runner.invoke(cli, [*args, *toy_cli_args, "--output-dir", output_dir])
    assert result.exit_code == 0, result.output
    return result


def test_no_command_is_a_usage_error(runner):
    """Invoking the group without a subcommand exits with status 2"""
    result = runner.invoke(cli, [])
    assert result.exit_code == 2
    assert main([]) == 2


def test_help_lists_subcommands(runner):
    """Every subcommand appears in --help"""
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for name in ("gen-corpus", "pretrain-stage1", "pretrain-stage2", "lit-tune", "probe", "lora",
                 "finetune", "eval-retrieval", "eval-zeroshot", "ablate", "stats", "report"):
        assert name in result.output


def test_config_errors_exit_with_status_1(runner, temp_output_dir):
    """An invalid override is reported on stderr and exits 1"""
    result = runner.invoke(cli, ["gen-corpus", "--set", "stage2.mask_ratoi=0.5", "--output-dir", temp_output_dir])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_gen_corpus_is_deterministic(runner, toy_cli_args, temp_output_dir):
    """Two runs with one seed write identical manifests and clip bytes"""
    root = Path(temp_output_dir)
    for name in ("a", "b"):
        invoke(runner, toy_cli_args, temp_output_dir, "gen-corpus", "--seed", "4", "--out", str(root / name))
    assert (root / "a" / "manifest.jsonl").read_bytes() == (root / "b" / "manifest.jsonl").read_bytes()
    clip = sorted((root / "a" / "clips").iterdir())[0].name
    assert (root / "a" / "clips" / clip).read_bytes() == (root / "b" / "clips" / clip).read_bytes()
    assert RunStorage(temp_output_dir).load_run_metadata("gen-corpus").status == RunStatus.COMPLETED


def test_stats_writes_histograms(runner, toy_cli_args, temp_output_dir):
    """stats prints the histogram table and writes stats.jsonl"""
    corpus_dir = str(Path(temp_output_dir) / "corpus")
    invoke(runner, toy_cli_args, temp_output_dir, "gen-corpus", "--out", corpus_dir)
    result = invoke(runner, toy_cli_args, temp_output_dir, "stats", "--corpus", corpus_dir, "--svg")
    assert "caption_length" in result.output
    rows = (Path(temp_output_dir) / "stats" / "stats.jsonl").read_text().splitlines()
    assert {json.loads(row)["histogram"] for row in rows} == {"duration", "caption_length"}
    assert list((Path(temp_output_dir) / "stats" / "reports").glob("*.svg"))


def test_pretrain_adapt_and_report(runner, toy_cli_args, temp_output_dir):
    """Stage 1, Stage 2, LiT, probes and evaluations chain through checkpoint files"""
    out = Path(temp_output_dir)
    invoke(runner, toy_cli_args, temp_output_dir, "pretrain-stage1")
    stage1 = out / "pretrain-stage1" / "checkpoints" / "stage1.ckpt"
    assert stage1.exists()

    invoke(runner, toy_cli_args, temp_output_dir, "pretrain-stage2", "--teacher", str(stage1),
           "--mask", "tube", "--no-shuffle")
    stage2 = out / "pretrain-stage2" / "checkpoints" / "stage2.ckpt"
    assert stage2.exists()
    params = RunStorage(temp_output_dir).load_run_metadata("pretrain-stage2").parameters
    assert params["stage2"]["mask_pattern"] == "tube"
    assert params["stage2"]["shuffle"] is False

    invoke(runner, toy_cli_args, temp_output_dir, "lit-tune", "--stage1", str(stage1), "--encoder", str(stage2))
    lit = out / "lit-tune" / "checkpoints" / "lit.ckpt"
    assert lit.exists()

    invoke(runner, toy_cli_args, temp_output_dir, "probe", "--checkpoint", str(stage2), "--task", "motion")
    invoke(runner, toy_cli_args, temp_output_dir, "lora", "--checkpoint", str(stage2), "--run", "lora-motion")
    invoke(runner, toy_cli_args, temp_output_dir, "eval-retrieval", "--checkpoint", str(lit))
    invoke(runner, toy_cli_args, temp_output_dir, "eval-zeroshot", "--checkpoint", str(lit), "--task", "color")

    storage = RunStorage(temp_output_dir)
    probe = storage.load_metrics("probe")
    assert [(r.task, r.regime, r.metric) for r in probe] == [("motion", "frozen", "accuracy")]
    assert storage.load_metrics("lora-motion")[0].regime == "lora"
    assert {r.metric for r in storage.load_metrics("eval-retrieval")} == {"t2v_r@1", "t2v_r@5", "v2t_r@1", "v2t_r@5"}
    assert storage.load_metrics("eval-zeroshot")[0].task == "color"

    result = invoke(runner, toy_cli_args, temp_output_dir, "report", "--from-run", "probe", "--from-run", "eval-zeroshot")
    assert "motion" in result.output
    assert "color" in result.output


def test_stage2_rejects_a_checkpoint_without_text_tower(runner, toy_cli_args, temp_output_dir):
    """A Stage-2 checkpoint cannot serve as a teacher"""
    out = Path(temp_output_dir)
    invoke(runner, toy_cli_args, temp_output_dir, "pretrain-stage1")
    invoke(runner, toy_cli_args, temp_output_dir, "pretrain-stage2",
           "--teacher", str(out / "pretrain-stage1" / "checkpoints" / "stage1.ckpt"))
    result = runner.invoke(cli, [
        "pretrain-stage2", "--teacher", str(out / "pretrain-stage2" / "checkpoints" / "stage2.ckpt"),
        "--run", "bad", *toy_cli_args, "--output-dir", temp_output_dir,
    ])
    assert result.exit_code == 1
    metadata = RunStorage(temp_output_dir).load_run_metadata("bad")
    assert metadata.status == RunStatus.FAILED
    assert "pretrain-stage2" in metadata.stages_failed


def test_report_unknown_run(runner, temp_output_dir):
    """Naming a run that does not exist is a config error"""
    result = runner.invoke(cli, ["report", "--from-run", "nope", "--output-dir", temp_output_dir])
    assert result.exit_code == 1
