"""Video clips and token grids"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import ShapeError

AXES = ("batch", "temporal", "spatial", "channel")


@dataclass
class VideoClip:
    """Raw frames ``[T, H, W, C]`` (uint8 or float in [0, 1]) with frame-rate metadata"""
    frames: np.ndarray
    fps: float = 8.0

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ShapeError("VideoClip", [self.frames.shape], "frames must be [T, H, W, C]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def is_image(self) -> bool:
        return self.num_frames == 1

    def as_float(self) -> np.ndarray:
        if self.frames.dtype == np.uint8:
            return self.frames.astype(np.float32) / 255.0
        return self.frames.astype(np.float32, copy=False)


@dataclass
class TokenGrid:
    """Token lattice ``[B, T, S, D]`` with explicit axis bookkeeping

    ``spatial_index`` maps the kept spatial slots back to positions in the full
    ``grid_h * grid_w`` lattice after tube-style token dropping (None = all kept).
    ``visible`` marks per-token visibility for irregular masks (None = all visible).
    """
    values: Tensor
    num_spatial: int
    spatial_index: Optional[np.ndarray] = None
    visible: Optional[np.ndarray] = None
    axes: Tuple[str, ...] = field(default=AXES)

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError("TokenGrid", [self.values.shape], "values must be [B, T, S, D]")
        if self.visible is not None and self.visible.shape != self.values.shape[:3]:
            raise ShapeError("TokenGrid", [self.values.shape, self.visible.shape], "visibility grid")

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def kept_spatial(self) -> int:
        return self.values.shape[2]

    @property
    def dim(self) -> int:
        return self.values.shape[3]

    def merged(self) -> Tensor:
        """Temporal-major merge to ``[B, T*S, D]``"""
        b, t, s, d = self.values.shape
        return ops.reshape(self.values, (b, t * s, d))

    def merged_key_mask(self) -> Optional[np.ndarray]:
        if self.visible is None:
            return None
        return self.visible.reshape(self.batch, -1)

    def positions(self) -> np.ndarray:
        """Canonical (temporal-major) index of every slot in the full ``T x S`` lattice, [B, T*S']"""
        spatial = self.spatial_index
        if spatial is None:
            spatial = np.broadcast_to(np.arange(self.kept_spatial), (self.batch, self.kept_spatial))
        frames = np.arange(self.frames)[None, :, None] * self.num_spatial
        return (frames + spatial[:, None, :]).reshape(self.batch, -1)

    def with_values(self, values: Tensor) -> "TokenGrid":
        return TokenGrid(values, self.num_spatial, self.spatial_index, self.visible, self.axes)
