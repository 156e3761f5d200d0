"""Configuration loading and validation

Config files are YAML. A file may pull in others with an ``include:`` key
(string or list, resolved relative to the including file); included values sit
underneath the including file's own values. Every key is also addressable as a
dotted flat key, which is how ``--set stage2.mask_ratio=0.75`` overrides work.
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = str(Path(__file__).resolve().parent.parent / "config" / "config.yaml")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EncoderConfig(_Section):
    """Video encoder geometry; one config drives teacher and student"""
    frames: int = 4
    height: int = 32
    width: int = 32
    channels: int = 3
    patch_t: int = 1
    patch_h: int = 8
    patch_w: int = 8
    embed_dim: int = 64
    spatial_layers: int = 2
    temporal_layers: int = 2
    heads: int = 4
    mlp_hidden: int = 256
    attention: Literal["factorized", "joint"] = "factorized"
    pos_init_std: float = 0.02

    @model_validator(mode="after")
    def _check_geometry(self) -> "EncoderConfig":
        if self.patch_t != 1:
            raise ValueError("patch_t must be 1 (frames are patchified independently)")
        if self.height % self.patch_h:
            raise ValueError(f"height {self.height} not divisible by patch_h {self.patch_h}")
        if self.width % self.patch_w:
            raise ValueError(f"width {self.width} not divisible by patch_w {self.patch_w}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if min(self.frames, self.spatial_layers + self.temporal_layers) < 1:
            raise ValueError("frames and total depth must be at least 1")
        return self

    @property
    def grid_h(self) -> int:
        return self.height // self.patch_h

    @property
    def grid_w(self) -> int:
        return self.width // self.patch_w

    @property
    def num_spatial(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def num_tokens(self) -> int:
        return self.frames * self.num_spatial

    @property
    def patch_dim(self) -> int:
        return self.patch_t * self.patch_h * self.patch_w * self.channels

    @property
    def depth(self) -> int:
        return self.spatial_layers + self.temporal_layers


class TextEncoderConfig(_Section):
    max_len: int = 16
    embed_dim: int = 64
    layers: int = 2
    heads: int = 4
    mlp_hidden: int = 256
    causal: bool = False
    min_count: int = 1


class DecoderConfig(_Section):
    """Shallow Stage-2 decoders (local and global share the geometry)"""
    hidden_dim: int = 32
    layers: int = 4
    heads: int = 4
    mlp_hidden: int = 128


class OptimConfig(_Section):
    lr: float = 1e-3
    floor_lr: float = 1e-5
    warmup_steps: int = 100
    schedule: Literal["linear", "cosine"] = "cosine"
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: Optional[float] = None


class MaskingConfig(_Section):
    """Blockwise sampler parameters"""
    min_block: int = 4
    aspect_min: float = 0.3
    block_temporal: Literal["extent", "tube", "frame"] = "extent"
    max_attempts: int = 100


class Stage1Config(_Section):
    steps: int = 2000
    batch_size: int = 32
    mask_ratio: float = Field(0.5, ge=0.0, lt=1.0)
    proj_dim: int = 64
    temperature_init: float = 0.07
    temperature_min: float = 0.01
    eval_every: int = 500
    checkpoint_every: int = 0
    optim: OptimConfig = OptimConfig(lr=1e-3, warmup_steps=100, schedule="linear")


class Stage2Config(_Section):
    steps: int = 2000
    batch_size: int = 16
    mask_ratio: float = Field(0.65, ge=0.0, lt=1.0)
    mask_pattern: Literal["tube", "blockwise"] = "blockwise"
    shuffle: bool = True
    global_distill: bool = True
    masked_only: bool = False
    target_pre_norm: bool = False
    eval_every: int = 400
    checkpoint_every: int = 0
    optim: OptimConfig = OptimConfig(lr=5e-4, warmup_steps=100, schedule="cosine")


class LitConfig(_Section):
    steps: int = 500
    batch_size: int = 32
    optim: OptimConfig = OptimConfig(lr=5e-4, warmup_steps=50, schedule="cosine")


class ProbeConfig(_Section):
    kind: Literal["map", "mlap", "linear-after-map"] = "map"
    steps: int = 300
    batch_size: int = 32
    heads: int = 4
    mlp_hidden: int = 128
    mlap_taps: int = 4
    task: Literal["appearance", "motion", "shape", "color", "multilabel"] = "motion"
    optim: OptimConfig = OptimConfig(lr=1e-3, warmup_steps=20, schedule="cosine", weight_decay=0.0)


class LoraConfig(_Section):
    rank: int = 8
    alpha: float = 8.0
    steps: int = 300
    optim: OptimConfig = OptimConfig(lr=1e-3, warmup_steps=20, schedule="cosine", weight_decay=0.0)


class FinetuneConfig(_Section):
    steps: int = 300
    optim: OptimConfig = OptimConfig(lr=1e-4, warmup_steps=20, schedule="cosine", weight_decay=0.0)


class EvalConfig(_Section):
    frames: Optional[int] = None
    gallery_size: int = 32
    batch_size: int = 32
    templates: Tuple[str, ...] = (
        "a video of {}.",
        "a clip of {}.",
        "a video showing {}.",
        "footage of {}.",
        "a short video of {}.",
        "a rendering of {}.",
        "{}.",
    )


class CorpusConfig(_Section):
    """Synthetic corpus generator settings"""
    n_clips: int = 512
    frames: int = 4
    height: int = 32
    width: int = 32
    fps: float = 8.0
    shapes: Tuple[str, ...] = ("circle", "square")
    colors: Tuple[str, ...] = ("red", "green", "blue", "yellow")
    motions: Tuple[str, ...] = ("left", "right", "up", "down")
    tier: Literal["clean", "noisy"] = "clean"
    noise_rate: float = Field(0.0, ge=0.0, le=1.0)
    kind: Literal["video", "image"] = "video"
    holdout: int = 64
    workers: int = 4
    segments: int = 1


class AblationConfig(_Section):
    seeds: Tuple[int, ...] = (0, 1, 2)
    stage1_steps: int = 600
    stage2_steps: int = 600
    probe_steps: int = 200
    mask_patterns: Tuple[str, ...] = ("tube", "blockwise")
    mask_ratios: Tuple[float, ...] = (0.5, 0.65, 0.75)


class AppConfig(_Section):
    seed: int = 0
    encoder: EncoderConfig = EncoderConfig()
    text: TextEncoderConfig = TextEncoderConfig()
    decoder: DecoderConfig = DecoderConfig()
    masking: MaskingConfig = MaskingConfig()
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    lit: LitConfig = LitConfig()
    probe: ProbeConfig = ProbeConfig()
    lora: LoraConfig = LoraConfig()
    finetune: FinetuneConfig = FinetuneConfig()
    eval: EvalConfig = EvalConfig()
    corpus: CorpusConfig = CorpusConfig()
    ablation: AblationConfig = AblationConfig()

    def snapshot(self) -> Dict[str, Any]:
        """JSON-ready copy for checkpoints and run metadata"""
        return self.model_dump(mode="json")

    def replace(self, **overrides: Any) -> "AppConfig":
        """Copy with dotted-key overrides applied (``replace(**{"stage2.shuffle": False})``)"""
        data = self.snapshot()
        for key, value in overrides.items():
            _set_dotted(data, key, value)
        return validate_config(data)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; ``override`` wins on conflicts"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: Path, chain: Tuple[Path, ...]) -> Dict[str, Any]:
    resolved = path.resolve()
    if resolved in chain:
        cycle = " -> ".join(str(p) for p in chain + (resolved,))
        raise ConfigError(f"include cycle: {cycle}")
    try:
        with open(resolved, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    includes = data.pop("include", None) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: Dict[str, Any] = {}
    for include in includes:
        merged = deep_merge(merged, _read_yaml(resolved.parent / include, chain + (resolved,)))
    return deep_merge(merged, data)


def _set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set '{key}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """Parse ``key=value`` strings; values are read as YAML scalars"""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"override '{pair}' has an empty key")
        try:
            overrides[key] = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"override '{pair}': {exc}") from exc
    return overrides


def flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Dotted flat view of a nested mapping"""
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def validate_config(data: Dict[str, Any]) -> AppConfig:
    try:
        return AppConfig.model_validate(data)
    except ValidationError as exc:
        problems: List[str] = []
        for error in exc.errors():
            location = ".".join(str(part) for part in error["loc"]) or "<root>"
            problems.append(f"{location}: {error['msg']}")
        raise ConfigError("invalid configuration: " + "; ".join(problems)) from exc


def load_config(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> AppConfig:
    """Load configuration from YAML file

    Args:
        config_path: Path to config file (None = built-in defaults only)
        overrides: Dotted-key overrides applied after includes

    Returns:
        Validated configuration

    Files and overrides are merged over the built-in defaults, so a partial
    section such as ``stage1.optim.lr`` keeps that section's other defaults.
    """
    data = AppConfig().snapshot()
    if config_path:
        data = deep_merge(data, _read_yaml(Path(config_path), ()))
        logger.info(f"Configuration loaded from: {config_path}")
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    return validate_config(data)
