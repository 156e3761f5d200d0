"""Shared fixtures: a toy-scale configuration and corpus"""

import tempfile

import pytest

from src.config import AppConfig
from src.corpus import Corpus

TOY_OVERRIDES = {
    "encoder.frames": 2,
    "encoder.height": 16,
    "encoder.width": 16,
    "encoder.patch_h": 8,
    "encoder.patch_w": 8,
    "encoder.embed_dim": 8,
    "encoder.spatial_layers": 1,
    "encoder.temporal_layers": 1,
    "encoder.heads": 2,
    "encoder.mlp_hidden": 16,
    "text.embed_dim": 8,
    "text.layers": 1,
    "text.heads": 2,
    "text.mlp_hidden": 16,
    "text.max_len": 12,
    "decoder.hidden_dim": 8,
    "decoder.layers": 1,
    "decoder.heads": 2,
    "decoder.mlp_hidden": 16,
    "stage1.proj_dim": 4,
    "stage1.steps": 3,
    "stage1.batch_size": 4,
    "stage1.eval_every": 0,
    "stage1.optim.warmup_steps": 1,
    "stage2.steps": 3,
    "stage2.batch_size": 4,
    "stage2.eval_every": 0,
    "stage2.optim.warmup_steps": 1,
    "stage2.mask_ratio": 0.5,
    "lit.steps": 2,
    "lit.batch_size": 4,
    "lit.optim.warmup_steps": 1,
    "probe.steps": 3,
    "probe.batch_size": 4,
    "probe.heads": 2,
    "probe.mlp_hidden": 16,
    "probe.mlap_taps": 2,
    "probe.optim.warmup_steps": 1,
    "lora.rank": 2,
    "lora.steps": 2,
    "lora.optim.warmup_steps": 1,
    "finetune.steps": 2,
    "finetune.optim.warmup_steps": 1,
    "eval.gallery_size": 4,
    "eval.batch_size": 4,
    "corpus.frames": 2,
    "corpus.height": 16,
    "corpus.width": 16,
    "corpus.n_clips": 24,
    "corpus.holdout": 8,
    "corpus.workers": 1,
}


@pytest.fixture
def toy_config():
    """Every section shrunk to a size that trains in well under a second per step"""
    return AppConfig().replace(**TOY_OVERRIDES)


@pytest.fixture
def toy_corpus(toy_config):
    """24 clean two-frame clips, deterministic in the run seed"""
    return Corpus.from_spec(toy_config.corpus, seed=0)


@pytest.fixture
def toy_cli_args():
    """The toy overrides as repeated --set options"""
    args = []
    for key, value in TOY_OVERRIDES.items():
        args += ["--set", f"{key}={value}"]
    return args


@pytest.fixture
def temp_output_dir():
    """Create a temporary output directory"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir
