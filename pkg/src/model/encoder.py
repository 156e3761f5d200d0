"""Factorized spatiotemporal video encoder

patchify -> positional embeddings -> spatial attention within each frame ->
LayerNorm -> temporal attention within each spatial position -> LayerNorm.
No pooling happens inside the encoder; callers pool with a ``MapHead``.
A joint-attention variant (one stack over all T*S tokens) is selected with
``EncoderConfig.attention = "joint"``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..config import EncoderConfig
from ..errors import ConfigError, ShapeError
from .grid import TokenGrid, VideoClip
from .layers import LayerNorm, Linear, TransformerStack, key_padding_mask
from .params import Module, Parameter, trunc_normal

logger = logging.getLogger(__name__)


class PosEmb(Module):
    """Decoupled learnable spatial [S, D] and temporal [T_max, D] tables"""

    def __init__(self, num_spatial: int, max_frames: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        super().__init__()
        self.spatial = Parameter(trunc_normal(rng, (num_spatial, dim), std))
        self.temporal = Parameter(trunc_normal(rng, (max_frames, dim), std))

    @property
    def max_frames(self) -> int:
        return self.temporal.shape[0]


def interpolation_matrix(old_t: int, new_t: int) -> np.ndarray:
    """[new_t, old_t] linear-interpolation weights with both endpoints preserved"""
    weights = np.zeros((new_t, old_t))
    if new_t == 1 or old_t == 1:
        weights[:, 0] = 1.0
        return weights
    for i in range(new_t):
        x = i * (old_t - 1) / (new_t - 1)
        lo = min(int(np.floor(x)), old_t - 1)
        hi = min(lo + 1, old_t - 1)
        frac = x - lo
        weights[i, lo] += 1.0 - frac
        weights[i, hi] += frac
    return weights


def interpolate_temporal(pos: PosEmb, new_t: int) -> Tensor:
    """Temporal table resampled to ``new_t`` rows"""
    if new_t < 1:
        raise ShapeError("interpolate_temporal", [pos.temporal.shape], f"new_T must be >= 1, got {new_t}")
    if new_t == pos.max_frames:
        return pos.temporal
    weights = Tensor(interpolation_matrix(pos.max_frames, new_t), dtype=pos.temporal.dtype)
    return ops.matmul(weights, pos.temporal)


def patchify_pixels(pixels: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """[B, T, H, W, C] pixels -> [B, T, S, ph*pw*C] flattened patches, row-major over the patch grid"""
    if pixels.ndim != 5:
        raise ShapeError("patchify", [pixels.shape], "clips must be [B, T, H, W, C]")
    b, t, h, w, c = pixels.shape
    for axis, size, patch in (("height", h, cfg.patch_h), ("width", w, cfg.patch_w)):
        if size % patch:
            raise ShapeError("patchify", [pixels.shape], f"{axis} {size} not divisible by patch {patch}")
    if c != cfg.channels:
        raise ShapeError("patchify", [pixels.shape], f"expected {cfg.channels} channels, got {c}")
    gh, gw = h // cfg.patch_h, w // cfg.patch_w
    patches = pixels.reshape(b, t, gh, cfg.patch_h, gw, cfg.patch_w, c)
    patches = patches.transpose(0, 1, 2, 4, 3, 5, 6)
    return np.ascontiguousarray(patches.reshape(b, t, gh * gw, cfg.patch_h * cfg.patch_w * c))


def _as_batch(clips: Union[VideoClip, np.ndarray, List[VideoClip]]) -> np.ndarray:
    if isinstance(clips, VideoClip):
        return clips.as_float()[None]
    if isinstance(clips, (list, tuple)):
        return np.stack([clip.as_float() for clip in clips])
    pixels = np.asarray(clips)
    if pixels.dtype == np.uint8:
        pixels = pixels.astype(np.float32) / 255.0
    return pixels[None] if pixels.ndim == 4 else pixels


def patchify(clips, cfg: EncoderConfig, projection: Linear) -> TokenGrid:
    """Project non-overlapping patches to ``D``; grid shape [B, T, S, D]"""
    pixels = _as_batch(clips)
    patches = Tensor(patchify_pixels(pixels, cfg), dtype=projection.weight.dtype)
    return TokenGrid(projection(patches), num_spatial=patches.shape[2])


def add_pos_emb(grid: TokenGrid, pos: PosEmb, interpolate: bool = False) -> TokenGrid:
    """Add ``spatial[s] + temporal[t]`` to every token

    Clips with fewer frames than the table (images are one-frame clips) use the
    leading temporal rows; longer clips need ``interpolate=True``.
    """
    frames = grid.frames
    if grid.spatial_index is not None or grid.kept_spatial != pos.spatial.shape[0]:
        raise ShapeError("add_pos_emb", [grid.values.shape, pos.spatial.shape], "apply before dropping tokens")
    if frames <= pos.max_frames:
        temporal = ops.take(pos.temporal, np.arange(frames))
    elif interpolate:
        temporal = interpolate_temporal(pos, frames)
    else:
        raise ShapeError(
            "add_pos_emb", [grid.values.shape, pos.temporal.shape],
            f"{frames} frames exceed the {pos.max_frames}-row temporal table; enable interpolation",
        )
    dim = grid.dim
    values = grid.values + ops.reshape(pos.spatial, (1, 1) + pos.spatial.shape)
    values = values + ops.reshape(temporal, (1, frames, 1, dim))
    return grid.with_values(values)


def drop_spatial(grid: TokenGrid, keep_index: np.ndarray) -> TokenGrid:
    """Keep the same spatial positions in every frame (tube token dropping)

    Args:
        grid: Full grid [B, T, S, D]
        keep_index: [B, S_keep] sorted spatial positions to keep per sample
    """
    b, t, s, d = grid.values.shape
    keep_index = np.asarray(keep_index, dtype=np.int64)
    if keep_index.ndim != 2 or keep_index.shape[0] != b:
        raise ShapeError("drop_spatial", [grid.values.shape, keep_index.shape])
    by_position = ops.reshape(ops.swapaxes(grid.values, 1, 2), (b, s, t * d))
    kept = ops.batch_gather(by_position, keep_index)
    values = ops.swapaxes(ops.reshape(kept, (b, keep_index.shape[1], t, d)), 1, 2)
    return TokenGrid(values, grid.num_spatial, spatial_index=keep_index, visible=None)


def hide_tokens(grid: TokenGrid, visible: np.ndarray) -> TokenGrid:
    """Attach an irregular visibility grid [B, T, S]; hidden tokens are excluded as attention keys"""
    return TokenGrid(grid.values, grid.num_spatial, grid.spatial_index, np.asarray(visible, dtype=bool))


@dataclass
class EncoderOutput:
    grid: TokenGrid
    pre_norm: Tensor
    spatial_out: Optional[Tensor] = None
    taps: List[Tensor] = field(default_factory=list)

    @property
    def values(self) -> Tensor:
        return self.grid.values

    def tokens(self, pre_norm: bool = False) -> Tensor:
        """Merged [B, T*S', D] tokens, temporal-major"""
        if pre_norm:
            return self.grid.with_values(self.pre_norm).merged()
        return self.grid.merged()

    def key_mask(self) -> Optional[np.ndarray]:
        return self.grid.merged_key_mask()


class VideoEncoder(Module):
    """Video tower; ``cfg.attention`` selects factorized or joint attention"""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_dim, dim, rng)
        self.pos = PosEmb(cfg.num_spatial, cfg.frames, dim, rng, cfg.pos_init_std)
        if cfg.attention == "factorized":
            self.spatial = TransformerStack(dim, cfg.spatial_layers, cfg.heads, cfg.mlp_hidden, rng)
            self.spatial_norm = LayerNorm(dim)
            self.temporal = TransformerStack(dim, cfg.temporal_layers, cfg.heads, cfg.mlp_hidden, rng)
            self.temporal_norm = LayerNorm(dim)
        else:
            self.joint = TransformerStack(dim, cfg.depth, cfg.heads, cfg.mlp_hidden, rng)
            self.final_norm = LayerNorm(dim)

    @property
    def depth(self) -> int:
        return self.cfg.depth

    def embed(self, clips, interpolate: bool = False) -> TokenGrid:
        grid = patchify(clips, self.cfg, self.patch_embed)
        return add_pos_emb(grid, self.pos, interpolate=interpolate)

    def encode(self, grid: TokenGrid, return_taps: bool = False) -> EncoderOutput:
        """Run the transformer stacks over an embedded (and optionally masked) grid"""
        if self.cfg.attention == "joint":
            return self._encode_joint(grid, return_taps)
        visible = grid.visible
        taps: List[Tensor] = []

        x = grid.values
        spatial_mask = key_padding_mask(visible)
        if return_taps:
            x, spatial_taps = self.spatial.run_with_taps(x, mask=spatial_mask)
            taps.extend(spatial_taps)
        else:
            x = self.spatial(x, mask=spatial_mask)
        spatial_out = self.spatial_norm(x)

        x = ops.swapaxes(spatial_out, 1, 2)
        temporal_mask = None if visible is None else key_padding_mask(np.swapaxes(visible, 1, 2))
        if return_taps:
            x, temporal_taps = self.temporal.run_with_taps(x, mask=temporal_mask)
            taps.extend(ops.swapaxes(tap, 1, 2) for tap in temporal_taps)
        else:
            x = self.temporal(x, mask=temporal_mask)
        pre_norm = ops.swapaxes(x, 1, 2) if len(self.temporal) else spatial_out
        out = ops.swapaxes(self.temporal_norm(x), 1, 2)
        return EncoderOutput(grid.with_values(out), pre_norm, spatial_out, taps)

    def _encode_joint(self, grid: TokenGrid, return_taps: bool) -> EncoderOutput:
        b, t, s, d = grid.values.shape
        x = grid.merged()
        mask = key_padding_mask(grid.merged_key_mask())
        taps: List[Tensor] = []
        if return_taps:
            x, flat_taps = self.joint.run_with_taps(x, mask=mask)
            taps = [ops.reshape(tap, (b, t, s, d)) for tap in flat_taps]
        else:
            x = self.joint(x, mask=mask)
        pre_norm = ops.reshape(x, (b, t, s, d))
        out = ops.reshape(self.final_norm(x), (b, t, s, d))
        return EncoderOutput(grid.with_values(out), pre_norm, None, taps)

    def __call__(
        self,
        clips,
        keep_spatial: Optional[np.ndarray] = None,
        visible: Optional[np.ndarray] = None,
        interpolate: bool = False,
        return_taps: bool = False,
    ) -> EncoderOutput:
        """Embed, optionally drop/hide tokens, and encode

        Args:
            clips: [B, T, H, W, C] pixels, a VideoClip, or a list of clips
            keep_spatial: [B, S_keep] positions kept in every frame (tube dropping)
            visible: [B, T, S] visibility for irregular masks
            interpolate: Allow more frames than the temporal table by interpolation
            return_taps: Also return every transformer block's output
        """
        if keep_spatial is not None and visible is not None:
            raise ConfigError("pass either keep_spatial or visible, not both")
        grid = self.embed(clips, interpolate=interpolate)
        if keep_spatial is not None:
            grid = drop_spatial(grid, keep_spatial)
        elif visible is not None:
            grid = hide_tokens(grid, visible)
        return self.encode(grid, return_taps=return_taps)


def encode(grid: TokenGrid, encoder: VideoEncoder) -> EncoderOutput:
    return encoder.encode(grid)


def tap_indices(depth: int, count: int) -> List[int]:
    """``count`` block indices evenly spaced over ``depth`` blocks, ending at the last block"""
    if count < 1 or count > depth:
        raise ConfigError(f"cannot tap {count} layers from an encoder of depth {depth}")
    # half-up rounding of (i + 1) * depth / count in integers
    return [(2 * (i + 1) * depth + count) // (2 * count) - 1 for i in range(count)]
