"""Shape traces of the encoder and Stage-2 decoders at arbitrary (including giant) scale

The trace runs real tensors through a depth-reduced copy of the network: depth
never changes a shape, so one spatial and one temporal block are enough to
reproduce every row of the architecture tables.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.tensor import no_grad
from ..config import DecoderConfig, EncoderConfig
from ..rng import derive_rng
from .decoder import GlobalDecoder, LocalDecoder, shuffle_fill
from .encoder import VideoEncoder, hide_tokens
from .layers import key_padding_mask

logger = logging.getLogger(__name__)

GIANT_ENCODER = EncoderConfig(
    frames=8, height=288, width=288, channels=3, patch_h=18, patch_w=18,
    embed_dim=1408, spatial_layers=40, temporal_layers=4, heads=16, mlp_hidden=6144,
)
GIANT_DECODER = DecoderConfig(hidden_dim=512, layers=4, heads=8, mlp_hidden=2048)


@dataclass(frozen=True)
class ShapeRow:
    """One traced step; ``visible`` counts the tokens that carry content at that step"""
    step: str
    block: str
    shape: Tuple[int, ...]
    visible: Optional[int] = None


def exact_count_mask(frames: int, num_spatial: int, ratio: float, seed: int) -> np.ndarray:
    """[T, S] visibility with exactly ``n - round(ratio * n)`` visible tokens"""
    n = frames * num_spatial
    masked = int(np.floor(ratio * n + 0.5))
    rng = derive_rng(seed, "trace-mask")
    visible = np.ones(n, dtype=bool)
    visible[rng.choice(n, size=masked, replace=False)] = False
    return visible.reshape(frames, num_spatial)


def _shallow(cfg: EncoderConfig) -> EncoderConfig:
    temporal = 1 if cfg.temporal_layers else 0
    spatial = 1 if cfg.spatial_layers else 0
    return cfg.model_copy(update={"spatial_layers": spatial, "temporal_layers": temporal})


def trace_encoder(cfg: EncoderConfig, ratio: float, seed: int = 0) -> List[ShapeRow]:
    """Encoder rows: data, patchify, mask, spatial, norm, transpose, temporal, norm, transpose, merge"""
    shallow = _shallow(cfg)
    encoder = VideoEncoder(shallow, derive_rng(seed, "trace-encoder"))
    T, S, D = cfg.frames, cfg.num_spatial, cfg.embed_dim
    clip = np.zeros((1, T, cfg.height, cfg.width, cfg.channels), dtype=np.float32)
    visible = exact_count_mask(T, S, ratio, seed)
    m = int(visible.sum())
    rows = [ShapeRow("Data", "-", clip.shape[1:])]

    with no_grad():
        grid = encoder.embed(clip)
        rows.append(ShapeRow("Preprocess", f"Patchify [1, {cfg.patch_h}, {cfg.patch_w}]", grid.values.shape[1:]))
        grid = hide_tokens(grid, visible[None])
        rows.append(ShapeRow("Drop token / Mask", "visibility", grid.values.shape[1:], m))

        x = encoder.spatial(grid.values, mask=key_padding_mask(grid.visible))
        rows.append(ShapeRow("Spatial encoder", f"MSA ({cfg.mlp_hidden}) x {cfg.spatial_layers}", x.shape[1:], m))
        x = encoder.spatial_norm(x)
        rows.append(ShapeRow("Normalization", "LayerNorm", x.shape[1:], m))
        x = ops.swapaxes(x, 1, 2)
        rows.append(ShapeRow("Transpose", "Switch dimension", x.shape[1:], m))
        x = encoder.temporal(x, mask=key_padding_mask(np.swapaxes(grid.visible, 1, 2)))
        rows.append(ShapeRow("Temporal encoder", f"MSA ({cfg.mlp_hidden}) x {cfg.temporal_layers}", x.shape[1:], m))
        x = encoder.temporal_norm(x)
        rows.append(ShapeRow("Normalization", "LayerNorm", x.shape[1:], m))
        x = ops.swapaxes(x, 1, 2)
        rows.append(ShapeRow("Transpose", "Switch dimension", x.shape[1:], m))
        merged = ops.reshape(x, (1, T * S, D))
        index = np.flatnonzero(visible.reshape(-1))[None]
        tokens = ops.batch_gather(merged, index)
        rows.append(ShapeRow("Reshape", "Merge dimension", tokens.shape[1:], m))
    logger.debug(f"traced encoder at D={D}, ratio={ratio}: {len(rows)} rows")
    return rows


def trace_decoders(
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    ratio: float,
    seed: int = 0,
) -> Tuple[List[ShapeRow], List[ShapeRow]]:
    """Local and global decoder columns: data, projector, decoder, projector"""
    n, D = enc_cfg.num_tokens, enc_cfg.embed_dim
    shallow = dec_cfg.model_copy(update={"layers": 1, "heads": 1})
    rng = derive_rng(seed, "trace-decoder")
    local = LocalDecoder(D, n, shallow, rng)
    global_dec = GlobalDecoder(D, shallow, rng, map_heads=1, map_hidden=shallow.mlp_hidden)
    visible = exact_count_mask(enc_cfg.frames, enc_cfg.num_spatial, ratio, seed).reshape(1, n)
    m = int(visible.sum())
    positions = np.flatnonzero(visible[0])[None]
    tokens = ops.reshape(local.mask_emb, (1, 1, D)) * np.zeros((1, m, 1), dtype=np.float32)

    local_rows: List[ShapeRow] = []
    global_rows: List[ShapeRow] = []
    with no_grad():
        filled = shuffle_fill(tokens, local.mask_emb, local.pos_emb, rng=rng, positions=positions)
        x = filled.inputs
        local_rows.append(ShapeRow("Data", "-", x.shape[1:]))
        x = local.in_proj(x)
        local_rows.append(ShapeRow("Projector", "MLP", x.shape[1:]))
        x = local.stack(x)
        local_rows.append(ShapeRow("Decoder", f"MSA ({dec_cfg.mlp_hidden}) x {dec_cfg.layers}", x.shape[1:]))
        x = local.out_proj(x)
        local_rows.append(ShapeRow("Projector", "MLP", x.shape[1:]))

        y = tokens
        global_rows.append(ShapeRow("Data", "-", y.shape[1:]))
        y = global_dec.in_proj(y)
        global_rows.append(ShapeRow("Projector", "MLP", y.shape[1:]))
        y = global_dec.stack(y)
        global_rows.append(ShapeRow("Decoder", f"MSA ({dec_cfg.mlp_hidden}) x {dec_cfg.layers}", y.shape[1:]))
        y = global_dec.out_proj(y)
        global_rows.append(ShapeRow("Projector", "MLP", y.shape[1:]))
        pooled = global_dec.map_head(y)
        global_rows.append(ShapeRow("MAP", "Attention pooling", pooled.shape[1:]))
    return local_rows, global_rows
