"""Unit tests for the video encoder, MAP pooling, LoRA and the giant-scale shape traces"""

import numpy as np
import pytest

from src.autograd import no_grad, ops
from src.autograd.tensor import Tensor
from src.config import DecoderConfig, EncoderConfig
from src.errors import CheckpointError, ConfigError, ShapeError
from src.model import Linear, MapHead, MultiHeadAttention, VideoEncoder, parameter_hash, tap_indices
from src.model.encoder import interpolation_matrix
from src.model.grid import TokenGrid
from src.model.shapes import GIANT_DECODER, GIANT_ENCODER, trace_decoders, trace_encoder


@pytest.fixture
def cfg():
    """Tiny factorized encoder: 2 frames of 16x16, patch 8, D=16"""
    return EncoderConfig(
        frames=2, height=16, width=16, patch_h=8, patch_w=8,
        embed_dim=16, spatial_layers=1, temporal_layers=1, heads=2, mlp_hidden=32,
    )


@pytest.fixture
def clips():
    return np.random.default_rng(3).random((2, 2, 16, 16, 3)).astype(np.float32)


def test_factorized_encoder_output_shape(cfg, clips):
    """[B, T, H, W, C] clips become a [B, T, S, D] grid and [B, T*S, D] merged tokens"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    with no_grad():
        out = encoder(clips)
    assert out.values.shape == (2, 2, 4, 16)
    assert out.tokens().shape == (2, 8, 16)
    assert out.tokens(pre_norm=True).shape == (2, 8, 16)
    assert out.key_mask() is None


def test_attention_keeps_the_model_dimension():
    """Self- and cross-attention return [..., L_q, D] for any number of batch axes"""
    attn = MultiHeadAttention(8, 2, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 5, 8)).astype(np.float32))
    assert attn(x).shape == (2, 3, 5, 8)
    context = Tensor(np.random.default_rng(2).normal(size=(2, 3, 4, 8)).astype(np.float32))
    assert attn(x, context=context).shape == (2, 3, 5, 8)


def test_spatial_stage_follows_frame_order(cfg):
    """Reordering the frames of a grid reorders the spatial-encoder outputs and nothing else"""
    four = cfg.model_copy(update={"frames": 4})
    encoder = VideoEncoder(four, np.random.default_rng(0))
    values = np.random.default_rng(1).normal(size=(2, 4, 4, 16)).astype(np.float32)
    order = np.array([2, 0, 3, 1])
    with no_grad():
        a = encoder.encode(TokenGrid(Tensor(values), num_spatial=4)).spatial_out.data
        b = encoder.encode(TokenGrid(Tensor(values[:, order]), num_spatial=4)).spatial_out.data
    np.testing.assert_allclose(b, a[:, order], atol=1e-6)

    encoder.pos.temporal.data[...] = 0.0
    pixels = np.random.default_rng(2).random((1, 4, 16, 16, 3)).astype(np.float32)
    with no_grad():
        a = encoder(pixels).spatial_out.data
        b = encoder(pixels[:, order]).spatial_out.data
    np.testing.assert_allclose(b, a[:, order], atol=1e-6)


def test_joint_encoder_matches_factorized_shapes(cfg, clips):
    """The joint-attention variant produces the same grid shape"""
    joint = VideoEncoder(cfg.model_copy(update={"attention": "joint"}), np.random.default_rng(0))
    with no_grad():
        out = joint(clips, return_taps=True)
    assert out.values.shape == (2, 2, 4, 16)
    assert len(out.taps) == cfg.depth


def test_tube_dropping_keeps_positions(cfg, clips):
    """keep_spatial drops the same positions in every frame and records them"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    keep = np.array([[0, 3], [1, 2]])
    with no_grad():
        out = encoder(clips, keep_spatial=keep)
    assert out.values.shape == (2, 2, 2, 16)
    np.testing.assert_array_equal(out.grid.positions()[0], [0, 3, 4, 7])


def test_irregular_visibility_sets_key_mask(cfg, clips):
    """Hidden tokens stay in the grid but are flagged in the key mask"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    visible = np.ones((2, 2, 4), dtype=bool)
    visible[0, 1, 2] = False
    with no_grad():
        out = encoder(clips, visible=visible)
    assert out.key_mask().shape == (2, 8)
    assert not out.key_mask()[0, 6]


def test_drop_and_hide_are_exclusive(cfg, clips):
    """Passing both keep_spatial and visible is a configuration error"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        encoder(clips, keep_spatial=np.array([[0], [1]]), visible=np.ones((2, 2, 4), dtype=bool))


def test_longer_clips_need_interpolation(cfg):
    """More frames than the temporal table fail unless interpolation is on"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    long_clip = np.zeros((1, 5, 16, 16, 3), dtype=np.float32)
    with pytest.raises(ShapeError):
        encoder(long_clip)
    with no_grad():
        out = encoder(long_clip, interpolate=True)
    assert out.values.shape == (1, 5, 4, 16)


def test_single_frame_uses_leading_temporal_row(cfg):
    """Images are one-frame clips and embed without interpolation"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    with no_grad():
        out = encoder(np.zeros((1, 1, 16, 16, 3), dtype=np.float32))
    assert out.values.shape == (1, 1, 4, 16)


def test_interpolation_preserves_endpoints():
    """Rows of the resampling matrix sum to one and the ends map to the ends"""
    weights = interpolation_matrix(4, 7)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)
    np.testing.assert_allclose(weights[0], [1, 0, 0, 0])
    np.testing.assert_allclose(weights[-1], [0, 0, 0, 1])
    np.testing.assert_allclose(interpolation_matrix(3, 3), np.eye(3))


def test_tap_indices():
    """Taps are evenly spaced and always include the last block"""
    assert tap_indices(8, 4) == [1, 3, 5, 7]
    assert tap_indices(4, 1) == [3]
    assert tap_indices(4, 4) == [0, 1, 2, 3]
    assert tap_indices(6, 4) == [1, 2, 4, 5]
    with pytest.raises(ConfigError):
        tap_indices(4, 5)
    with pytest.raises(ConfigError):
        tap_indices(4, 0)


def test_map_head_is_permutation_invariant():
    """Pooling is bit-identical under any reordering of the tokens"""
    rng = np.random.default_rng(0)
    head = MapHead(8, 2, 16, rng)
    tokens = rng.normal(size=(2, 6, 8)).astype(np.float32)
    perm = rng.permutation(6)
    with no_grad():
        a = head(Tensor(tokens)).data
        b = head(Tensor(tokens[:, perm])).data
    np.testing.assert_array_equal(a, b)
    assert a.shape == (2, 8)


def test_map_head_respects_key_mask():
    """Masked tokens do not influence the pooled vector"""
    rng = np.random.default_rng(1)
    head = MapHead(8, 2, 16, rng, d_out=4)
    tokens = rng.normal(size=(1, 5, 8)).astype(np.float32)
    mask = np.array([[True, True, True, False, False]])
    changed = tokens.copy()
    changed[0, 3:] = 100.0
    with no_grad():
        a = head(Tensor(tokens), key_mask=mask).data
        b = head(Tensor(changed), key_mask=mask).data
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert a.shape == (1, 4)
    with pytest.raises(ShapeError):
        head(Tensor(tokens), key_mask=np.zeros((1, 5), dtype=bool))


def test_lora_starts_as_identity_update():
    """A freshly attached adapter leaves the layer output unchanged"""
    rng = np.random.default_rng(0)
    layer = Linear(6, 4, rng)
    x = Tensor(rng.normal(size=(3, 6)).astype(np.float32))
    before = layer(x).data
    layer.attach_lora(2, 4.0, np.random.default_rng(1))
    assert layer.has_lora
    np.testing.assert_allclose(layer(x).data, before, atol=1e-7)
    layer.detach_lora()
    assert not layer.has_lora
    assert set(layer.parameters()) == {"weight", "bias"}


def test_lora_rank_is_bounded():
    """Rank must fit inside the weight"""
    with pytest.raises(ConfigError):
        Linear(4, 3, np.random.default_rng(0)).attach_lora(4, 1.0, np.random.default_rng(0))


def test_state_dict_round_trip(cfg):
    """Loading one encoder's state into another makes the parameter hashes equal"""
    a = VideoEncoder(cfg, np.random.default_rng(0))
    b = VideoEncoder(cfg, np.random.default_rng(1))
    assert parameter_hash(a) != parameter_hash(b)
    b.load_state_dict(a.state_dict(prefix="video."), prefix="video.")
    assert parameter_hash(a) == parameter_hash(b)


def test_load_state_dict_reports_missing_and_bad_shapes(cfg):
    """Missing keys raise CheckpointError; wrong shapes raise ShapeError"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    state = encoder.state_dict()
    partial = dict(state)
    partial.pop("patch_embed.weight")
    with pytest.raises(CheckpointError):
        encoder.load_state_dict(partial)
    assert "patch_embed.weight" not in encoder.load_state_dict(partial, strict=False)
    state["patch_embed.bias"] = np.zeros(3)
    with pytest.raises(ShapeError):
        encoder.load_state_dict(state)


def test_freeze_clears_trainable_set(cfg):
    """freeze() and unfreeze() toggle every parameter"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    assert encoder.freeze().trainable_parameters() == {}
    assert encoder.unfreeze().num_parameters(trainable_only=True) == encoder.num_parameters()


@pytest.mark.parametrize("ratio,visible", [(0.5, 1024), (0.65, 717)])
def test_giant_encoder_trace(ratio, visible):
    """8x288x288x3 clips at patch 18 and D=1408 reproduce every encoder row"""
    rows = trace_encoder(GIANT_ENCODER, ratio)
    shapes = [(row.step, row.shape) for row in rows]
    assert shapes == [
        ("Data", (8, 288, 288, 3)),
        ("Preprocess", (8, 256, 1408)),
        ("Drop token / Mask", (8, 256, 1408)),
        ("Spatial encoder", (8, 256, 1408)),
        ("Normalization", (8, 256, 1408)),
        ("Transpose", (256, 8, 1408)),
        ("Temporal encoder", (256, 8, 1408)),
        ("Normalization", (256, 8, 1408)),
        ("Transpose", (8, 256, 1408)),
        ("Reshape", (visible, 1408)),
    ]
    assert rows[2].visible == visible
    assert rows[3].block == "MSA (6144) x 40"
    assert rows[6].block == "MSA (6144) x 4"


@pytest.mark.parametrize("ratio,visible", [(0.5, 1024), (0.65, 717)])
def test_giant_decoder_traces(ratio, visible):
    """Local decoder maps 2048x1408 through 512; global decoder pools the visible tokens"""
    local, global_ = trace_decoders(GIANT_ENCODER, GIANT_DECODER, ratio)
    assert [row.shape for row in local] == [(2048, 1408), (2048, 512), (2048, 512), (2048, 1408)]
    assert [row.shape for row in global_] == [
        (visible, 1408), (visible, 512), (visible, 512), (visible, 1408), (1408,),
    ]
    assert local[2].block == "MSA (2048) x 4"


def test_decoder_config_is_independent_of_encoder():
    """The decoder hidden width is its own setting"""
    local, _ = trace_decoders(
        EncoderConfig(frames=2, height=16, width=16, patch_h=8, patch_w=8, embed_dim=16),
        DecoderConfig(hidden_dim=8, layers=2, heads=2, mlp_hidden=16),
        ratio=0.5,
    )
    assert [row.shape for row in local] == [(8, 16), (8, 8), (8, 8), (8, 16)]


def test_merge_is_temporal_major(cfg, clips):
    """Merged token t*S + s is the grid token (t, s)"""
    encoder = VideoEncoder(cfg, np.random.default_rng(0))
    with no_grad():
        out = encoder(clips)
    grid = out.values.data
    merged = out.tokens().data
    np.testing.assert_array_equal(merged[1, 1 * 4 + 2], grid[1, 1, 2])
    assert ops.reshape(out.values, (2, 8, 16)).shape == merged.shape
