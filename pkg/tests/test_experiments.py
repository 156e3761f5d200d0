"""Unit tests for the ablation grids"""

import pytest

from src.errors import ConfigError
from src.experiments.ablation import TEACHER_VARIANT, ablation_variants, run_ablation


def test_masking_grid_crosses_patterns_and_ratios(toy_config):
    """Every pattern is paired with every ratio"""
    variants = ablation_variants(toy_config, "masking")
    assert len(variants) == len(toy_config.ablation.mask_patterns) * len(toy_config.ablation.mask_ratios)
    cfg = variants[0].apply(toy_config)
    assert cfg.stage2.mask_pattern == "tube"
    assert cfg.stage2.mask_ratio == 0.5


def test_distill_grid_turns_off_one_component_each(toy_config):
    """The full recipe plus one variant per disabled loss component"""
    variants = {v.name: v.apply(toy_config) for v in ablation_variants(toy_config, "distill")}
    assert variants["full"] == toy_config
    assert variants["no-shuffle"].stage2.shuffle is False
    assert variants["no-global"].stage2.global_distill is False


def test_unknown_axis(toy_config):
    """Axes outside the known grids are rejected"""
    with pytest.raises(ConfigError, match="unknown ablation axis"):
        ablation_variants(toy_config, "depth")


def test_distill_ablation_shares_the_teacher(toy_config, toy_corpus):
    """One teacher row per seed plus one row per variant, each scored on both tasks"""
    cfg = toy_config.replace(**{"ablation.stage1_steps": 2, "ablation.stage2_steps": 2, "ablation.probe_steps": 2})
    train, held_out = toy_corpus.split(8)
    result = run_ablation(cfg, "distill", train, held_out, seeds=[0])
    assert [row.variant for row in result.rows] == [TEACHER_VARIANT, "full", "no-shuffle", "no-global"]
    assert len(result.records) == 4 * 2
    assert all(0.0 <= result.row("full").mean(task) <= 1.0 for task in ("appearance", "motion"))
    assert {r.tags["axis"] for r in result.records} == {"distill"}


def test_attention_ablation_trains_a_teacher_per_variant(toy_config, toy_corpus):
    """Architecture variants cannot share a teacher"""
    cfg = toy_config.replace(**{"ablation.stage1_steps": 1, "ablation.stage2_steps": 1, "ablation.probe_steps": 1})
    train, held_out = toy_corpus.split(8)
    result = run_ablation(cfg, "attention", train, held_out, seeds=[0])
    names = [row.variant for row in result.rows]
    assert f"{TEACHER_VARIANT}/joint" in names
    assert TEACHER_VARIANT not in names
