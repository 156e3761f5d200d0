"""Unit tests for configuration loading, includes and overrides"""

from pathlib import Path

import pytest

from src.config import DEFAULT_CONFIG_PATH, AppConfig, deep_merge, flatten, load_config, parse_overrides
from src.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def test_shipped_configs_validate():
    """The default and full-scale configs load, and the latter inherits prompt templates"""
    default = load_config(str(CONFIG_DIR / "config.yaml"))
    assert default.encoder.num_tokens == 4 * 16
    assert len(default.eval.templates) > 1

    full = load_config(str(CONFIG_DIR / "full_scale.yaml"))
    assert full.encoder.num_spatial == 256
    assert full.encoder.depth == 44
    assert full.eval.templates == default.eval.templates
    assert full.lora.rank == 64
    assert default.lora.rank == 8


def test_include_sits_under_local_values(temp_output_dir):
    """Included files supply defaults; the including file wins"""
    root = Path(temp_output_dir)
    write(root / "base.yaml", "seed: 1\nstage2:\n  mask_ratio: 0.5\n  shuffle: false\n")
    main = write(root / "main.yaml", "include: base.yaml\nstage2:\n  mask_ratio: 0.75\n")
    cfg = load_config(str(main))
    assert cfg.seed == 1
    assert cfg.stage2.mask_ratio == 0.75
    assert cfg.stage2.shuffle is False


def test_include_cycle_is_reported(temp_output_dir):
    """a -> b -> a fails with the chain in the message"""
    root = Path(temp_output_dir)
    write(root / "a.yaml", "include: b.yaml\n")
    write(root / "b.yaml", "include: a.yaml\n")
    with pytest.raises(ConfigError, match="include cycle"):
        load_config(str(root / "a.yaml"))


def test_missing_and_malformed_files(temp_output_dir):
    """Absent files, bad YAML and non-mapping documents are config errors"""
    root = Path(temp_output_dir)
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(root / "absent.yaml"))
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(str(write(root / "bad.yaml", "seed: [1, 2\n")))
    with pytest.raises(ConfigError, match="mapping"):
        load_config(str(write(root / "list.yaml", "- 1\n- 2\n")))


def test_unknown_keys_are_rejected(temp_output_dir):
    """Typos in section or field names fail validation with the dotted location"""
    with pytest.raises(ConfigError, match="stage2.mask_ratoi"):
        load_config(overrides={"stage2.mask_ratoi": 0.5})
    with pytest.raises(ConfigError):
        load_config(overrides={"stage3.steps": 1})


def test_value_constraints():
    """Ratios outside [0, 1) and indivisible geometry are invalid"""
    with pytest.raises(ConfigError):
        AppConfig().replace(**{"stage2.mask_ratio": 1.0})
    with pytest.raises(ConfigError, match="patch_h"):
        AppConfig().replace(**{"encoder.height": 30})
    with pytest.raises(ConfigError, match="heads"):
        AppConfig().replace(**{"encoder.heads": 5})


def test_parse_overrides_reads_yaml_scalars():
    """Values are typed like YAML; malformed pairs are rejected"""
    parsed = parse_overrides(["stage2.mask_ratio=0.75", "stage2.shuffle=false", "eval.frames=8", "probe.kind=mlap"])
    assert parsed == {"stage2.mask_ratio": 0.75, "stage2.shuffle": False, "eval.frames": 8, "probe.kind": "mlap"}
    with pytest.raises(ConfigError):
        parse_overrides(["stage2.shuffle"])
    with pytest.raises(ConfigError):
        parse_overrides(["=1"])


def test_overrides_apply_after_includes(temp_output_dir):
    """Command-line overrides beat file values"""
    main = write(Path(temp_output_dir) / "main.yaml", "stage1:\n  steps: 10\n")
    cfg = load_config(str(main), overrides={"stage1.steps": 3, "stage1.optim.lr": 0.01})
    assert cfg.stage1.steps == 3
    assert cfg.stage1.optim.lr == 0.01
    assert cfg.stage1.optim.schedule == "linear"


def test_partial_section_override_keeps_section_defaults():
    """Overriding one optimizer field leaves that section's other defaults alone"""
    defaults = AppConfig()
    cfg = load_config(None, {"stage1.optim.lr": 0.01, "lora.optim.lr": 0.002})
    assert cfg.stage1.optim.lr == 0.01
    assert cfg.stage1.optim.schedule == defaults.stage1.optim.schedule == "linear"
    assert cfg.stage1.optim.warmup_steps == defaults.stage1.optim.warmup_steps
    assert cfg.lora.optim.weight_decay == 0.0


def test_builtin_templates_match_shipped_prompts():
    """Running without a config file still evaluates zero-shot with the full template set"""
    shipped = load_config(str(CONFIG_DIR / "config.yaml"))
    assert AppConfig().eval.templates == shipped.eval.templates
    assert len(shipped.eval.templates) == 7
    assert Path(DEFAULT_CONFIG_PATH) == CONFIG_DIR / "config.yaml"
    assert Path(DEFAULT_CONFIG_PATH).is_file()


def test_replace_returns_new_validated_copy():
    """replace never mutates the original"""
    base = AppConfig()
    changed = base.replace(**{"encoder.attention": "joint"})
    assert base.encoder.attention == "factorized"
    assert changed.encoder.attention == "joint"
    with pytest.raises(ConfigError, match="not a section"):
        base.replace(**{"seed.value": 1})


def test_deep_merge_and_flatten():
    """Nested merges keep untouched siblings; flatten gives dotted keys"""
    merged = deep_merge({"a": {"x": 1, "y": 2}, "b": 1}, {"a": {"y": 3}})
    assert merged == {"a": {"x": 1, "y": 3}, "b": 1}
    assert flatten(merged) == {"a.x": 1, "a.y": 3, "b": 1}


def test_snapshot_round_trips():
    """A JSON snapshot validates back to an equal config"""
    cfg = AppConfig().replace(**{"stage2.mask_pattern": "tube"})
    assert AppConfig.model_validate(cfg.snapshot()) == cfg
