"""Synthetic video-caption corpus

Each clip shows one coloured shape on a noisy background. Appearance
factors (shape, colour) are visible in any single frame; the motion factor
only shows up across frames. Frame 0 depends on shape, colour, start
position, size and background alone, so no single frame distinguishes the
motion classes. Motion wraps around the frame edges.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import CorpusConfig
from ..errors import CorpusError
from ..model.grid import VideoClip
from ..patterns import run_rolling_window
from ..rng import derive_rng
from .clip_io import write_clip
from .manifest import ClipRecord, write_manifest

logger = logging.getLogger(__name__)

COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 220, 40),
    "magenta": (210, 50, 200),
    "cyan": (40, 210, 220),
    "white": (240, 240, 240),
    "orange": (240, 140, 30),
}
SHAPES = ("circle", "square", "triangle", "diamond")
MOTIONS: Dict[str, Tuple[int, int, float]] = {
    # (dy, dx) per frame in units of ``speed``, plus rotation per frame in radians
    "left": (0, -1, 0.0),
    "right": (0, 1, 0.0),
    "up": (-1, 0, 0.0),
    "down": (1, 0, 0.0),
    "static": (0, 0, 0.0),
    "rotate": (0, 0, np.pi / 6),
}
MOTION_PHRASES = {
    "left": "to the left",
    "right": "to the right",
    "up": "upward",
    "down": "downward",
    "static": "staying still",
    "rotate": "spinning in place",
}
VIDEO_TEMPLATES = (
    "a {color} {shape} moving {motion}",
    "the {color} {shape} is moving {motion}",
    "a video of a {color} {shape} moving {motion}",
    "{motion} goes a {color} {shape}",
)
IMAGE_TEMPLATES = (
    "a photo of a {color} {shape}",
    "a {color} {shape}",
    "a picture showing a {color} {shape}",
)
BACKGROUND_LEVEL = 40
BACKGROUND_NOISE = 12


@dataclass(frozen=True)
class ClipFactors:
    """Everything that determines a clip's pixels"""
    shape: str
    color: str
    motions: Tuple[str, ...]
    center: Tuple[float, float]
    radius: float
    background_seed: int


def _toroidal_offsets(height: int, width: int, center: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    dy = np.mod(ys - center[0] + height / 2.0, height) - height / 2.0
    dx = np.mod(xs - center[1] + width / 2.0, width) - width / 2.0
    return dy, dx


def shape_mask(shape: str, dy: np.ndarray, dx: np.ndarray, radius: float, angle: float = 0.0) -> np.ndarray:
    if angle:
        cos, sin = np.cos(angle), np.sin(angle)
        dy, dx = cos * dy - sin * dx, sin * dy + cos * dx
    if shape == "circle":
        return dy * dy + dx * dx <= radius * radius
    if shape == "square":
        return (np.abs(dy) <= radius * 0.85) & (np.abs(dx) <= radius * 0.85)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= radius
    if shape == "triangle":
        return (dy <= radius * 0.7) & (dy >= -radius) & (np.abs(dx) <= (dy + radius) * 0.6)
    raise CorpusError(f"unknown shape '{shape}'")


def render_clip(
    factors: ClipFactors,
    frames_per_segment: int,
    height: int,
    width: int,
    speed: float,
) -> np.ndarray:
    """[T, H, W, 3] uint8 frames; segments follow one another with continuous position"""
    total = frames_per_segment * len(factors.motions)
    noise_rng = np.random.default_rng(factors.background_seed)
    background = BACKGROUND_LEVEL + noise_rng.integers(
        -BACKGROUND_NOISE, BACKGROUND_NOISE + 1, size=(total, height, width, 3)
    )
    frames = np.clip(background, 0, 255).astype(np.uint8)
    color = np.array(COLORS[factors.color], dtype=np.uint8)

    cy, cx = factors.center
    angle = 0.0
    for t in range(total):
        motion = factors.motions[t // frames_per_segment]
        if t > 0:
            dy, dx, spin = MOTIONS[motion]
            cy, cx = (cy + dy * speed) % height, (cx + dx * speed) % width
            angle += spin
        off_y, off_x = _toroidal_offsets(height, width, (cy, cx))
        frames[t][shape_mask(factors.shape, off_y, off_x, factors.radius, angle)] = color
    return frames


def caption_for(
    shape: str,
    color: str,
    motion: Optional[str],
    template: int,
) -> str:
    if motion is None:
        return IMAGE_TEMPLATES[template % len(IMAGE_TEMPLATES)].format(color=color, shape=shape)
    return VIDEO_TEMPLATES[template % len(VIDEO_TEMPLATES)].format(
        color=color, shape=shape, motion=MOTION_PHRASES[motion]
    )


def _validate(spec: CorpusConfig) -> None:
    unknown = [s for s in spec.shapes if s not in SHAPES]
    unknown += [c for c in spec.colors if c not in COLORS]
    unknown += [m for m in spec.motions if m not in MOTIONS]
    if unknown:
        raise CorpusError(f"unknown corpus factors: {', '.join(unknown)}")
    if spec.n_clips < 0:
        raise CorpusError("n_clips must be non-negative")
    if spec.kind == "image" and spec.frames != 1:
        raise CorpusError("image corpora have exactly one frame per clip")
    if spec.kind == "video" and spec.segments > len(spec.motions):
        raise CorpusError(f"{spec.segments} segments need at least as many motion classes")


def sample_clip(spec: CorpusConfig, seed: int, index: int) -> Tuple[VideoClip, ClipRecord]:
    """Draw and render clip ``index``; each clip uses its own stream derived from (seed, index)"""
    rng = derive_rng(seed, "clip", index)
    shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
    color = spec.colors[int(rng.integers(len(spec.colors)))]
    center = (float(rng.uniform(0, spec.height)), float(rng.uniform(0, spec.width)))
    radius = float(rng.uniform(0.18, 0.26) * min(spec.height, spec.width))
    background_seed = int(rng.integers(0, 2**31 - 1))
    segments = max(1, spec.segments)

    if spec.kind == "image":
        motions: Tuple[str, ...] = ("static",)
    elif segments > 1:
        motions = tuple(spec.motions[i] for i in rng.permutation(len(spec.motions))[:segments])
    else:
        motions = (spec.motions[int(rng.integers(len(spec.motions)))],)
    template = int(rng.integers(1 << 16))

    factors = ClipFactors(shape, color, motions, center, radius, background_seed)
    speed = max(1.0, min(spec.height, spec.width) / 8.0)
    frames = render_clip(factors, spec.frames, spec.height, spec.width, speed)
    static = ClipFactors(shape, color, ("static",) * len(motions), center, radius, background_seed)
    if not np.array_equal(frames[0], render_clip(static, 1, spec.height, spec.width, speed)[0]):
        raise CorpusError(f"clip {index}: first frame depends on the motion class")

    image = spec.kind == "image"
    clean = caption_for(shape, color, None if image else motions[0], template)
    segment_captions = [caption_for(shape, color, m, template) for m in motions] if segments > 1 else []
    if segments > 1:
        clean = " then ".join(segment_captions)

    caption = clean
    if spec.tier == "noisy" and rng.uniform() < spec.noise_rate:
        wrong_shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
        wrong_color = spec.colors[int(rng.integers(len(spec.colors)))]
        wrong_motion = None if image else spec.motions[int(rng.integers(len(spec.motions)))]
        caption = caption_for(wrong_shape, wrong_color, wrong_motion, template + 1)

    record = ClipRecord(
        path=f"clips/{index:06d}.clip",
        caption=caption,
        shape=shape,
        color=color,
        motion=motions[0],
        tier=spec.tier,
        kind=spec.kind,
        frames=frames.shape[0],
        fps=spec.fps,
        clean_caption=clean,
        segment_captions=segment_captions,
        segment_motions=list(motions) if segments > 1 else [],
    )
    return VideoClip(frames, fps=spec.fps), record


def generate_clips(spec: CorpusConfig, seed: int) -> Tuple[np.ndarray, List[ClipRecord]]:
    """In-memory corpus: uint8 frames [N, T, H, W, 3] and their records"""
    _validate(spec)
    results = run_rolling_window(
        list(range(spec.n_clips)), lambda i: sample_clip(spec, seed, i), max_concurrent=max(1, spec.workers)
    )
    total_frames = spec.frames * max(1, spec.segments)
    if not results:
        return np.zeros((0, total_frames, spec.height, spec.width, 3), dtype=np.uint8), []
    frames = np.stack([clip.frames for clip, _ in results])
    return frames, [record for _, record in results]


def gen_corpus(spec: CorpusConfig, out_dir: str, seed: int) -> Path:
    """Write clips and ``manifest.jsonl`` under ``out_dir``

    Returns:
        Path to the manifest
    """
    _validate(spec)
    root = Path(out_dir)
    (root / "clips").mkdir(parents=True, exist_ok=True)

    def work(index: int) -> ClipRecord:
        clip, record = sample_clip(spec, seed, index)
        write_clip(root / record.path, clip)
        return record

    records = run_rolling_window(list(range(spec.n_clips)), work, max_concurrent=max(1, spec.workers))
    manifest = root / "manifest.jsonl"
    write_manifest(manifest, records)
    logger.info(f"Generated {len(records)} {spec.tier} {spec.kind} clips under {root}")
    return manifest


def factor_labels(records: Sequence[ClipRecord], factor: str) -> Tuple[np.ndarray, List[str]]:
    """Integer labels for one factor (``shape``, ``color``, ``motion`` or ``appearance``)"""
    if factor == "appearance":
        values = [f"{r.color} {r.shape}" for r in records]
    elif factor in ("shape", "color", "motion"):
        values = [getattr(r, factor) for r in records]
    else:
        raise CorpusError(f"unknown factor '{factor}'")
    classes = sorted(set(values))
    lookup = {name: i for i, name in enumerate(classes)}
    return np.array([lookup[v] for v in values], dtype=np.int64), classes
