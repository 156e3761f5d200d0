"""Task heads and the shared adaptation loop

Three head kinds read encoder tokens:

- ``map``: a fresh attention pooler, LayerNorm and linear classifier
- ``mlap``: a learned query refined by one cross-attention layer per tapped
  encoder block, then LayerNorm and a linear classifier
- ``linear-after-map``: a frozen pretrained pooler feeding a linear classifier

The same loop trains every regime. Frozen regimes read features computed once
up front; LoRA and end-to-end regimes run the encoder on every batch.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import adamw_step, lr_at, ops
from ..autograd.tensor import Tensor, no_grad
from ..config import AppConfig, OptimConfig
from ..corpus.dataset import Corpus
from ..corpus.manifest import ClipRecord
from ..errors import ConfigError, CorpusError, FrozenParametersError, ShapeError
from ..model.encoder import VideoEncoder, tap_indices
from ..model.layers import LayerNorm, Linear, MapHead, MLP, MultiHeadAttention
from ..model.params import Module, ModuleList, Parameter, parameter_hash, trunc_normal
from ..rng import derive_rng
from ..storage.schemas import MetricRecord
from ..training.common import TrainHistory, StepResult, check_finite, log_step, make_optimizer, make_schedule, optimizer_step
from .features import FeatureSet, encode_corpus, forward_features
from .metrics import accuracy, mean_average_precision

logger = logging.getLogger(__name__)

HEAD_KINDS = ("map", "mlap", "linear-after-map")
BACKGROUND_CLASSES = ("static", "motion:static")


@dataclass
class TaskData:
    """Labels for one corpus; ``targets`` is multi-hot [N, C] for multi-label tasks"""
    name: str
    classes: List[str]
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    @property
    def multilabel(self) -> bool:
        return self.targets is not None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.targets) if self.multilabel else len(self.labels)

    def loss(self, logits: Tensor, indices: np.ndarray) -> Tensor:
        if self.multilabel:
            return ops.bce_with_logits(logits, self.targets[indices])
        return ops.cross_entropy(logits, self.labels[indices])

    def score(self, logits: np.ndarray) -> Tuple[str, float]:
        if self.multilabel:
            return "mAP", mean_average_precision(logits, self.targets, self.classes, exclude=BACKGROUND_CLASSES)
        return "accuracy", accuracy(logits.argmax(axis=1), self.labels)


def _multilabel_names(record: ClipRecord) -> List[str]:
    if record.segment_motions:
        return list(record.segment_motions)
    return [f"shape:{record.shape}", f"color:{record.color}", f"motion:{record.motion}"]


def task_labels(records: Sequence[ClipRecord], task: str, classes: Optional[Sequence[str]] = None) -> TaskData:
    """Labels for ``task`` over ``records``; ``classes`` pins the label space (e.g. train + held-out union)"""
    if task == "multilabel":
        names = [_multilabel_names(r) for r in records]
        classes = list(classes) if classes is not None else sorted({n for row in names for n in row})
        lookup = {c: i for i, c in enumerate(classes)}
        targets = np.zeros((len(records), len(classes)))
        for row, present in enumerate(names):
            for name in present:
                if name not in lookup:
                    raise CorpusError(f"label '{name}' is outside the task's classes")
                targets[row, lookup[name]] = 1.0
        return TaskData(task, classes, targets=targets)
    if task not in ("appearance", "shape", "color", "motion"):
        raise ConfigError(f"unknown task '{task}'")
    values = [f"{r.color} {r.shape}" if task == "appearance" else getattr(r, task) for r in records]
    classes = list(classes) if classes is not None else sorted(set(values))
    lookup = {c: i for i, c in enumerate(classes)}
    missing = sorted(set(values) - set(lookup))
    if missing:
        raise CorpusError(f"labels {missing} are outside the task's classes")
    return TaskData(task, classes, labels=np.array([lookup[v] for v in values], dtype=np.int64))


def split_task(train: Corpus, held_out: Corpus, task: str) -> Tuple[TaskData, TaskData]:
    """Train and held-out labels over a shared class list"""
    union = task_labels(train.records + held_out.records, task)
    return task_labels(train.records, task, union.classes), task_labels(held_out.records, task, union.classes)


class CrossAttentionLayer(Module):
    """``q += MSA(LN(q), LN(context))`` then ``q += MLP(LN(q))``"""

    def __init__(self, dim: int, heads: int, mlp_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.ln_q = LayerNorm(dim)
        self.ln_kv = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_hidden, rng)

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        query = query + self.attn(self.ln_q(query), context=self.ln_kv(context))
        return query + self.mlp(self.ln_mlp(query))


def copy_pooler(pooler: MapHead, rng: np.random.Generator) -> MapHead:
    """Detached copy of a trained MAP head"""
    copy = MapHead(
        pooler.dim, pooler.attn.heads, pooler.mlp.fc1.d_out, rng,
        d_out=pooler.proj.d_out if pooler.proj is not None else None,
    )
    copy.load_state_dict(pooler.state_dict())
    return copy


class ProbeHead(Module):
    def __init__(
        self,
        kind: str,
        dim: int,
        num_classes: int,
        rng: np.random.Generator,
        heads: int = 4,
        mlp_hidden: int = 128,
        taps: int = 4,
        pooler: Optional[MapHead] = None,
    ):
        super().__init__()
        if kind not in HEAD_KINDS:
            raise ConfigError(f"unknown probe head '{kind}' (expected one of {', '.join(HEAD_KINDS)})")
        if num_classes < 1:
            raise ConfigError("a probe head needs at least one class")
        self.kind = kind
        self.dim = dim
        self.num_taps = taps if kind == "mlap" else 0
        if kind == "map":
            self.pool = MapHead(dim, heads, mlp_hidden, rng)
            self.norm = LayerNorm(dim)
            self.classifier = Linear(dim, num_classes, rng)
        elif kind == "mlap":
            self.query = Parameter(trunc_normal(rng, (1, dim)))
            self.layers = ModuleList(CrossAttentionLayer(dim, heads, mlp_hidden, rng) for _ in range(taps))
            self.norm = LayerNorm(dim)
            self.classifier = Linear(dim, num_classes, rng)
        else:
            if pooler is None:
                raise ConfigError("linear-after-map needs a pretrained MAP pooler")
            self.pool = copy_pooler(pooler, rng).freeze()
            self.classifier = Linear(self.pool.d_out, num_classes, rng)

    def __call__(self, tokens: Tensor, taps: Sequence[Tensor] = ()) -> Tensor:
        """Class logits [B, C] from final tokens [B, L, D] (MAP kinds) or tapped tokens (MLAP)"""
        if self.kind == "mlap":
            if len(taps) != self.num_taps:
                raise ShapeError("mlap", [t.shape for t in taps], f"expected {self.num_taps} tapped layers")
            batch = taps[0].shape[0]
            query = ops.broadcast_to(self.query, (batch, 1, self.dim))
            for layer, context in zip(self.layers, taps):
                query = layer(query, context)
            return self.classifier(self.norm(ops.reshape(query, (batch, self.dim))))
        pooled = self.pool(tokens)
        if self.kind == "map":
            pooled = self.norm(pooled)
        return self.classifier(pooled)


def build_head(
    cfg: AppConfig,
    kind: str,
    num_classes: int,
    seed: int,
    pooler: Optional[MapHead] = None,
) -> ProbeHead:
    """Head initialisation depends on (seed, kind) only, so every regime starts from the same head"""
    rng = derive_rng(seed, "init", "head", kind)
    return ProbeHead(
        kind, cfg.encoder.embed_dim, num_classes, rng,
        heads=cfg.probe.heads, mlp_hidden=cfg.probe.mlp_hidden, taps=cfg.probe.mlap_taps, pooler=pooler,
    )


def head_taps(encoder: VideoEncoder, head: ProbeHead) -> List[int]:
    return tap_indices(encoder.depth, head.num_taps) if head.num_taps else []


def _trainable(encoder: VideoEncoder, head: ProbeHead) -> Dict[str, Parameter]:
    params = {name: p for name, p in head.named_parameters("head.") if p.requires_grad}
    params.update({name: p for name, p in encoder.named_parameters("encoder.") if p.requires_grad})
    return params


def train_head(
    encoder: VideoEncoder,
    head: ProbeHead,
    corpus: Corpus,
    task: TaskData,
    steps: int,
    batch_size: int,
    optim: OptimConfig,
    seed: int,
    stage: str,
    features: Optional[FeatureSet] = None,
    head_optim: Optional[OptimConfig] = None,
) -> TrainHistory:
    """Fit every trainable parameter of ``head`` and ``encoder`` on ``task``

    With ``head_optim`` the head gets its own optimizer and schedule while
    ``optim`` drives the encoder; both step on one backward pass. The logged
    learning rate is the encoder's.

    Raises:
        CorpusError: Label count differs from clip count
        TrainingDivergedError: Loss became NaN/inf
    """
    if len(task) != len(corpus):
        raise CorpusError(f"{len(task)} labels for {len(corpus)} clips in '{corpus.name}'")
    taps = head_taps(encoder, head)
    params = _trainable(encoder, head)
    if head_optim is None:
        groups = [(params, optim)]
    else:
        backbone = {name: p for name, p in params.items() if not name.startswith("head.")}
        head_params = {name: p for name, p in params.items() if name.startswith("head.")}
        groups = [(backbone, optim), (head_params, head_optim)]
    optimizers = [
        (group, make_optimizer(cfg, group), make_schedule(cfg, steps)) for group, cfg in groups if group
    ]
    history = TrainHistory()
    for step in range(steps):
        batch = corpus.batch(step, batch_size, seed)
        if features is not None:
            tokens, tapped = features.take(batch.indices)
        else:
            tokens, tapped = forward_features(encoder, batch.pixels, taps)
        loss = task.loss(head(tokens, tapped), batch.indices)
        value = check_finite(loss, step, stage, corpus.name)
        if len(optimizers) == 1:
            group, state, schedule = optimizers[0]
            lr = optimizer_step(loss, group, state, schedule, step)
        else:
            for param in params.values():
                param.grad = None
            loss.backward()
            rates = []
            for group, state, schedule in optimizers:
                rates.append(lr_at(schedule, step))
                adamw_step(group, state, rates[-1])
            lr = rates[0]
        result = StepResult(step, value, lr, corpus.name)
        history.steps.append(result)
        log_step(stage, result)
    return history


def predict(
    encoder: VideoEncoder,
    head: ProbeHead,
    corpus: Corpus,
    batch_size: int = 32,
    features: Optional[FeatureSet] = None,
) -> np.ndarray:
    """[N, C] logits"""
    if features is None:
        features = encode_corpus(encoder, corpus, batch_size, head_taps(encoder, head))
    chunks = []
    with no_grad():
        for start in range(0, len(features), batch_size):
            tokens, tapped = features.take(np.arange(start, min(start + batch_size, len(features))))
            chunks.append(head(tokens, tapped).data.copy())
    return np.concatenate(chunks)


@dataclass
class AdaptationResult:
    task: str
    regime: str
    metric: str
    value: float
    head: ProbeHead
    history: TrainHistory
    backbone_hash: str
    tags: Dict[str, str] = field(default_factory=dict)
    encoder: Optional[VideoEncoder] = None

    def to_records(self, seed: int) -> List[MetricRecord]:
        step = len(self.history.steps)
        return [MetricRecord(self.task, self.regime, self.metric, self.value, seed, step, dict(self.tags))]


def probe_train(
    cfg: AppConfig,
    encoder: VideoEncoder,
    train: Corpus,
    held_out: Corpus,
    seed: int,
    kind: Optional[str] = None,
    task: Optional[str] = None,
    pooler: Optional[MapHead] = None,
    steps: Optional[int] = None,
) -> AdaptationResult:
    """Frozen-backbone probe: only head weights move

    Raises:
        FrozenParametersError: The backbone changed while training the head
    """
    kind = kind or cfg.probe.kind
    task_name = task or cfg.probe.task
    steps = cfg.probe.steps if steps is None else steps
    train_task, eval_task = split_task(train, held_out, task_name)
    encoder.freeze()
    before = parameter_hash(encoder)

    head = build_head(cfg, kind, train_task.num_classes, seed, pooler)
    taps = head_taps(encoder, head)
    bs = cfg.eval.batch_size
    train_features = encode_corpus(encoder, train, bs, taps)
    history = train_head(
        encoder, head, train, train_task, steps, cfg.probe.batch_size, cfg.probe.optim, seed,
        f"probe-{kind}", features=train_features,
    )
    metric, value = eval_task.score(predict(encoder, head, held_out, bs, encode_corpus(encoder, held_out, bs, taps)))

    after = parameter_hash(encoder)
    if after != before:
        raise FrozenParametersError("backbone", f"{kind} probe")
    regime = "mlap" if kind == "mlap" else "frozen"
    logger.info(f"{kind} probe on {task_name}: {metric}={value:.3f} after {steps} steps")
    return AdaptationResult(task_name, regime, metric, value, head, history, after, {"head": kind})
