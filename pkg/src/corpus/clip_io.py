"""Clip file format

One clip per file: an 18-byte little-endian header followed by planar uint8
frames laid out as [T, C, H, W].

    magic   4s  b"PRCL"
    version B   1
    pad     B
    T, H, W u16 x3
    C       u16
    fps     f32
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import CorpusError
from ..model.grid import VideoClip

MAGIC = b"PRCL"
VERSION = 1
_HEADER = struct.Struct("<4sBBHHHHf")


def write_clip(path: Union[str, Path], clip: VideoClip) -> None:
    frames = clip.frames
    if frames.dtype != np.uint8:
        frames = np.clip(np.round(clip.as_float() * 255.0), 0, 255).astype(np.uint8)
    t, h, w, c = frames.shape
    header = _HEADER.pack(MAGIC, VERSION, 0, t, h, w, c, float(clip.fps))
    planar = np.ascontiguousarray(frames.transpose(0, 3, 1, 2))
    with open(path, "wb") as f:
        f.write(header)
        f.write(planar.tobytes())


def read_clip(path: Union[str, Path]) -> VideoClip:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorpusError(f"{path}: truncated clip header")
    magic, version, _, t, h, w, c, fps = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorpusError(f"{path}: not a clip file")
    if version != VERSION:
        raise CorpusError(f"{path}: unsupported clip version {version}")
    expected = t * h * w * c
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != expected:
        raise CorpusError(f"{path}: expected {expected} pixel bytes, found {body.size}")
    frames = body.reshape(t, c, h, w).transpose(0, 2, 3, 1).copy()
    return VideoClip(frames, fps=float(fps))
