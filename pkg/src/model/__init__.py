"""Networks: video encoder, text tower, Stage-2 decoders and their building blocks"""

from .decoder import GlobalDecoder, LocalDecoder, ShuffleResult, global_decode, local_decode, shuffle_fill
from .encoder import (
    EncoderOutput,
    PosEmb,
    VideoEncoder,
    add_pos_emb,
    drop_spatial,
    encode,
    hide_tokens,
    interpolate_temporal,
    patchify,
    tap_indices,
)
from .grid import TokenGrid, VideoClip
from .layers import Linear, MapHead, MultiHeadAttention, TransformerBlock, map_pool
from .params import Module, Parameter, parameter_hash
from .text import CLS_ID, PAD_ID, UNK_ID, TextEncoder, Vocabulary, encode_text, pack_batch

__all__ = [
    "GlobalDecoder",
    "LocalDecoder",
    "ShuffleResult",
    "global_decode",
    "local_decode",
    "shuffle_fill",
    "EncoderOutput",
    "PosEmb",
    "VideoEncoder",
    "add_pos_emb",
    "drop_spatial",
    "encode",
    "hide_tokens",
    "interpolate_temporal",
    "patchify",
    "tap_indices",
    "TokenGrid",
    "VideoClip",
    "Linear",
    "MapHead",
    "MultiHeadAttention",
    "TransformerBlock",
    "map_pool",
    "Module",
    "Parameter",
    "parameter_hash",
    "CLS_ID",
    "PAD_ID",
    "UNK_ID",
    "TextEncoder",
    "Vocabulary",
    "encode_text",
    "pack_batch",
]
