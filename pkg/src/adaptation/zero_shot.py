"""Zero-shot classification by prompting the text tower

Each class name is dropped into every prompt template; a class scores the
mean similarity between the video embedding and its prompt embeddings.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..corpus.dataset import Corpus
from ..corpus.synthetic import MOTION_PHRASES
from ..errors import ConfigError, CorpusError
from ..training.contrastive import DualEncoder
from .features import embed_texts, embed_videos
from .metrics import accuracy

logger = logging.getLogger(__name__)


@dataclass
class ZeroShotResult:
    scores: np.ndarray
    predictions: np.ndarray
    classes: List[str]


def class_phrase(task: str, name: str) -> str:
    """Natural-language class name for a synthetic task label"""
    if task == "motion":
        return f"a shape moving {MOTION_PHRASES.get(name, name)}"
    return name


def prompt_texts(class_names: Sequence[str], templates: Sequence[str]) -> List[str]:
    """Class-major list: all templates for class 0, then class 1, ..."""
    if not class_names:
        raise ConfigError("zero-shot classification needs at least one class")
    if not templates:
        raise ConfigError("zero-shot classification needs at least one prompt template")
    return [template.format(name) for name in class_names for template in templates]


def zero_shot_scores(video: np.ndarray, prompt_embeddings: np.ndarray, num_classes: int) -> np.ndarray:
    """[N, C] mean over templates of <video, prompt>"""
    prompts = prompt_embeddings.reshape(num_classes, -1, prompt_embeddings.shape[-1])
    return np.einsum("nd,ctd->nct", video, prompts).mean(axis=2)


def zero_shot_classify(
    model: DualEncoder,
    video: np.ndarray,
    class_names: Sequence[str],
    templates: Sequence[str],
) -> ZeroShotResult:
    """Score [N, P] video embeddings against every class; ties go to the lower class index"""
    prompts = embed_texts(model, prompt_texts(class_names, templates))
    scores = zero_shot_scores(np.asarray(video), prompts, len(class_names))
    return ZeroShotResult(scores, scores.argmax(axis=1), list(class_names))


def evaluate_zero_shot(
    model: DualEncoder,
    corpus: Corpus,
    task: str,
    templates: Sequence[str],
    batch_size: int = 32,
) -> float:
    """Accuracy on a single-label factor task (``appearance``, ``shape``, ``color`` or ``motion``)"""
    if not len(corpus):
        raise CorpusError(f"corpus '{corpus.name}' is empty")
    labels, classes = corpus.labels(task)
    video = embed_videos(model, corpus, batch_size)
    result = zero_shot_classify(model, video, [class_phrase(task, c) for c in classes], templates)
    score = accuracy(result.predictions, labels)
    logger.info(f"Zero-shot {task} on '{corpus.name}': {score:.3f} ({len(classes)} classes, chance {1 / len(classes):.3f})")
    return score
