"""Classification, multi-label and aggregate scores"""

import logging
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import ShapeError

logger = logging.getLogger(__name__)


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError("accuracy", [predictions.shape, labels.shape])
    if not labels.size:
        raise ShapeError("accuracy", [labels.shape], "no examples")
    return float((predictions == labels).mean())


def average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """Interpolated average precision of one class

    Precision at each recall level is replaced by the best precision at any
    higher recall, then averaged over the positive examples. Ties in score
    keep the lower index first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=bool)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise ShapeError("average_precision", [scores.shape, targets.shape])
    positives = int(targets.sum())
    if positives == 0:
        raise ShapeError("average_precision", [targets.shape], "class has no positive examples")
    order = np.argsort(-scores, kind="stable")
    hits = targets[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interpolated[hits].sum() / positives)


def mean_average_precision(
    scores: np.ndarray,
    targets: np.ndarray,
    classes: Optional[Sequence[str]] = None,
    exclude: Sequence[str] = (),
) -> float:
    """Macro mean of per-class AP over [N, C] scores and multi-hot targets

    Classes without positives and classes named in ``exclude`` are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=bool)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ShapeError("mean_average_precision", [scores.shape, targets.shape])
    names = list(classes) if classes is not None else [str(c) for c in range(scores.shape[1])]
    values = [
        average_precision(scores[:, c], targets[:, c])
        for c, name in enumerate(names)
        if name not in exclude and targets[:, c].any()
    ]
    if not values:
        raise ShapeError("mean_average_precision", [targets.shape], "no class has positive examples")
    return float(np.mean(values))


def stratified_average(groups: Mapping[str, Sequence[float]]) -> float:
    """Mean within each task group, then the unweighted mean across groups"""
    if not groups:
        raise ShapeError("stratified_average", [()], "no task groups")
    means = []
    for name, scores in sorted(groups.items()):
        if len(scores) == 0:
            raise ShapeError("stratified_average", [()], f"task group '{name}' is empty")
        means.append(float(np.mean(scores)))
    return float(np.mean(means))
