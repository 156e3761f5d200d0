"""Synthetic video-caption corpora: generation, storage, batching and statistics"""

from .clip_io import read_clip, write_clip
from .dataset import Batch, Corpus
from .manifest import ClipRecord, read_manifest, write_manifest
from .stats import CorpusStats, Histogram, corpus_stats, histogram
from .synthetic import factor_labels, gen_corpus, generate_clips, render_clip, sample_clip

__all__ = [
    "read_clip",
    "write_clip",
    "Batch",
    "Corpus",
    "ClipRecord",
    "read_manifest",
    "write_manifest",
    "CorpusStats",
    "Histogram",
    "corpus_stats",
    "histogram",
    "factor_labels",
    "gen_corpus",
    "generate_clips",
    "render_clip",
    "sample_clip",
]
