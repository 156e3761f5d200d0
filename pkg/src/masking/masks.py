"""Visibility masks over the T x S token lattice

Tube masks hide the same spatial positions in every frame. Blockwise masks
union rectangular spatial blocks, each replicated over a sampled run of
frames, until the target count is reached. ``grid`` is True where a token is
masked; canonical order is temporal-major everywhere.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..config import MaskingConfig
from ..errors import MaskError, ShapeError
from ..model.grid import TokenGrid
from ..rng import derive_rng

logger = logging.getLogger(__name__)

Block = Tuple[int, int, int, int, int, int]  # t0, extent, top, left, height, width


class MaskPattern(str, Enum):
    TUBE = "tube"
    BLOCKWISE = "blockwise"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class MaskSpec:
    """Boolean masked-token grid [T, S] plus how it was drawn"""
    pattern: MaskPattern
    ratio: float
    grid: np.ndarray
    seed: int
    grid_hw: Optional[Tuple[int, int]] = None
    blocks: List[Block] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return self.grid.shape[0]

    @property
    def num_spatial(self) -> int:
        return self.grid.shape[1]

    @property
    def num_tokens(self) -> int:
        return self.grid.size

    @property
    def masked_count(self) -> int:
        return int(self.grid.sum())

    @property
    def visible_count(self) -> int:
        return self.num_tokens - self.masked_count

    @property
    def achieved_ratio(self) -> float:
        return self.masked_count / self.num_tokens

    @property
    def visible(self) -> np.ndarray:
        return ~self.grid

    def is_tube(self) -> bool:
        return bool((self.grid == self.grid[:1]).all())

    def kept_spatial(self) -> np.ndarray:
        """Spatial positions visible in every frame (tube masks only)"""
        if not self.is_tube():
            raise MaskError("kept_spatial is only defined for masks constant over time")
        return np.flatnonzero(~self.grid[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pattern": self.pattern.value,
            "ratio": self.ratio,
            "seed": self.seed,
            "grid": ["".join("1" if v else "0" for v in row) for row in self.grid],
            "grid_hw": list(self.grid_hw) if self.grid_hw else None,
            "blocks": [list(b) for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MaskSpec":
        grid = np.array([[c == "1" for c in row] for row in data["grid"]], dtype=bool)
        return cls(
            pattern=MaskPattern(data["pattern"]),
            ratio=float(data["ratio"]),
            grid=grid,
            seed=int(data["seed"]),
            grid_hw=tuple(data["grid_hw"]) if data.get("grid_hw") else None,
            blocks=[tuple(b) for b in data.get("blocks", [])],
        )


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio < 1.0:
        raise MaskError(f"mask ratio must be in [0, 1), got {ratio}")


def sample_tube_mask(frames: int, num_spatial: int, ratio: float, seed: int) -> MaskSpec:
    """Mask ``round(ratio * S)`` uniformly chosen spatial positions in every frame

    The masked total is ``T * round(ratio * S)`` (halves round up). It can
    differ from ``round(ratio * T * S)`` when ``ratio * S`` is fractional,
    since every frame must hide the same columns.
    """
    _check_ratio(ratio)
    grid = np.zeros((frames, num_spatial), dtype=bool)
    count = round_half_up(ratio * num_spatial)
    if count:
        rng = derive_rng(seed, "tube")
        grid[:, rng.choice(num_spatial, size=count, replace=False)] = True
    return MaskSpec(MaskPattern.TUBE, ratio, grid, seed)


def _exact_block_shape(area: int, grid_h: int, grid_w: int) -> Tuple[int, int]:
    """Smallest fitting h x w with h*w >= area, preferring an exact product"""
    best = None
    for h in range(1, grid_h + 1):
        w = -(-area // h)
        if w > grid_w:
            continue
        if best is None or h * w < best[0] * best[1]:
            best = (h, w)
    if best is None:
        raise MaskError(f"a block of {area} tokens does not fit a {grid_h}x{grid_w} grid")
    return best


def sample_blockwise_mask(
    frames: int,
    grid_h: int,
    grid_w: int,
    ratio: float,
    seed: int,
    params: Optional[MaskingConfig] = None,
) -> MaskSpec:
    """Union rectangular blocks with a temporal extent until ``ceil(ratio * T * S)`` tokens are masked

    Every block spans at least ``min_block`` spatial tokens and at most the
    remaining budget, so the achieved count lands in
    ``[target, target + min_block - 1]`` (``T * min_block - 1`` in tube mode).
    """
    _check_ratio(ratio)
    params = params or MaskingConfig()
    num_spatial = grid_h * grid_w
    target = int(math.ceil(ratio * frames * num_spatial - 1e-9))
    grid = np.zeros((frames, grid_h, grid_w), dtype=bool)
    blocks: List[Block] = []
    spec = lambda: MaskSpec(  # noqa: E731
        MaskPattern.BLOCKWISE, ratio, grid.reshape(frames, num_spatial), seed, (grid_h, grid_w), blocks
    )
    if target == 0:
        return spec()
    min_block = params.min_block
    if min_block > num_spatial or target < min_block:
        raise MaskError(
            f"min_block={min_block} infeasible for target {target} on a {frames}x{grid_h}x{grid_w} grid"
        )
    mode = params.block_temporal
    per_block_floor = frames * min_block if mode == "tube" else min_block
    rng = derive_rng(seed, "blockwise")
    log_aspect = (math.log(params.aspect_min), math.log(1.0 / params.aspect_min))

    masked = 0
    while masked < target:
        budget = max(target - masked, per_block_floor)
        placed = False
        for _ in range(params.max_attempts):
            if mode == "tube":
                extent = frames
            elif mode == "frame":
                extent = 1
            else:
                extent = int(rng.integers(1, min(frames, budget // min_block) + 1))
            max_area = budget // extent
            if max_area < min_block:
                continue
            area = rng.uniform(min_block, max_area)
            aspect = math.exp(rng.uniform(*log_aspect))
            h = int(round(math.sqrt(area * aspect)))
            w = int(round(math.sqrt(area / aspect)))
            if h < 1 or w < 1 or h > grid_h or w > grid_w or h * w < min_block or extent * h * w > budget:
                continue
            t0 = int(rng.integers(0, frames - extent + 1))
            top = int(rng.integers(0, grid_h - h + 1))
            left = int(rng.integers(0, grid_w - w + 1))
            region = grid[t0:t0 + extent, top:top + h, left:left + w]
            if region.all():
                continue
            region[...] = True
            blocks.append((t0, extent, top, left, h, w))
            placed = True
            break
        if not placed:
            # cover the first unmasked token with the smallest admissible block
            h, w = _exact_block_shape(min_block, grid_h, grid_w)
            t, y, x = (int(v) for v in np.argwhere(~grid)[0])
            t0, extent = (0, frames) if mode == "tube" else (t, 1)
            top, left = min(y, grid_h - h), min(x, grid_w - w)
            grid[t0:t0 + extent, top:top + h, left:left + w] = True
            blocks.append((t0, extent, top, left, h, w))
        masked = int(grid.sum())

    result = spec()
    logger.debug(f"blockwise mask: target={target} achieved={result.masked_count} blocks={len(blocks)}")
    return result


def sample_mask(
    pattern: Union[str, MaskPattern],
    frames: int,
    grid_h: int,
    grid_w: int,
    ratio: float,
    seed: int,
    params: Optional[MaskingConfig] = None,
) -> MaskSpec:
    if MaskPattern(pattern) == MaskPattern.TUBE:
        spec = sample_tube_mask(frames, grid_h * grid_w, ratio, seed)
        spec.grid_hw = (grid_h, grid_w)
        return spec
    return sample_blockwise_mask(frames, grid_h, grid_w, ratio, seed, params)


@dataclass
class VisibleTokens:
    """Visible tokens gathered in canonical order, padded to the batch maximum

    ``index[b, j]`` is the canonical position of row j; padded rows have
    ``valid`` False and index 0.
    """
    values: Tensor
    index: np.ndarray
    valid: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.valid.sum(axis=1)


def visible_index(visible: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """[B, n] visibility -> padded canonical index [B, M] and validity [B, M]"""
    visible = np.asarray(visible, dtype=bool)
    counts = visible.sum(axis=1)
    width = int(counts.max()) if counts.size else 0
    index = np.zeros((visible.shape[0], width), dtype=np.int64)
    valid = np.zeros((visible.shape[0], width), dtype=bool)
    for row in range(visible.shape[0]):
        positions = np.flatnonzero(visible[row])
        index[row, : len(positions)] = positions
        valid[row, : len(positions)] = True
    return index, valid


def gather_visible(tokens: Tensor, visible: np.ndarray) -> VisibleTokens:
    """Gather visible rows of merged tokens [B, n, D] given visibility [B, n]"""
    if visible.shape != tokens.shape[:2]:
        raise ShapeError("apply_mask", [tokens.shape, visible.shape], "mask does not match token grid")
    index, valid = visible_index(visible)
    return VisibleTokens(ops.batch_gather(tokens, index), index, valid)


def apply_mask(grid: TokenGrid, masks: Union[MaskSpec, Sequence[MaskSpec]]) -> VisibleTokens:
    """Visible tokens of a full grid in canonical temporal-major order, with their index map"""
    if isinstance(masks, MaskSpec):
        masks = [masks] * grid.batch
    if len(masks) != grid.batch:
        raise ShapeError("apply_mask", [grid.values.shape, (len(masks),)], "one mask per sample")
    for mask in masks:
        if mask.grid.shape != (grid.frames, grid.kept_spatial):
            raise ShapeError("apply_mask", [grid.values.shape[1:3], mask.grid.shape], "mask dims")
    visible = np.stack([m.visible.reshape(-1) for m in masks])
    return gather_visible(grid.merged(), visible)


def scatter_visible(gathered: VisibleTokens, num_tokens: int, fill: float = 0.0) -> np.ndarray:
    """Inverse of the gather: [B, n, D] array with visible rows restored and ``fill`` elsewhere"""
    values = gathered.values.data
    out = np.full((values.shape[0], num_tokens, values.shape[2]), fill, dtype=values.dtype)
    for row in range(values.shape[0]):
        keep = gathered.valid[row]
        out[row, gathered.index[row, keep]] = values[row, keep]
    return out


def stack_visibility(masks: Sequence[MaskSpec]) -> np.ndarray:
    """[B, T, S] visibility from per-sample masks"""
    return np.stack([m.visible for m in masks])


def tube_keep_index(masks: Sequence[MaskSpec]) -> np.ndarray:
    """[B, S_keep] kept spatial positions for tube masks of equal size"""
    kept = [m.kept_spatial() for m in masks]
    if len({len(k) for k in kept}) != 1:
        raise MaskError("tube masks in one batch must keep the same number of positions")
    return np.stack(kept)
