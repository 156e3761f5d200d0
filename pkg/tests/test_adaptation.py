"""Unit tests for metrics, retrieval, zero-shot prompting, probes, LoRA, fine-tuning and LiT"""

import numpy as np
import pytest

from src.adaptation import (
    accuracy,
    average_precision,
    build_head,
    clone_encoder,
    evaluate_retrieval,
    evaluate_zero_shot,
    finetune_e2e,
    gallery_retrieval,
    lit_tune,
    lora_inject,
    lora_parameter_count,
    lora_train,
    match_ranks,
    mean_average_precision,
    probe_train,
    prompt_texts,
    remove_lora,
    retrieval_eval,
    segment_retrieval_eval,
    split_task,
    stratified_average,
    task_labels,
)
from src.adaptation.lora import backbone_hash
from src.adaptation.zero_shot import zero_shot_scores
from src.autograd import no_grad
from src.corpus import Corpus
from src.errors import ConfigError, CorpusError, ShapeError
from src.model import VideoEncoder
from src.model.params import parameter_hash
from src.rng import derive_rng
from src.training import DualEncoder, build_vocabulary, train_stage1


@pytest.fixture
def splits(toy_config, toy_corpus):
    """(train, held-out) with the last eight clips held out"""
    return toy_corpus.split(toy_config.corpus.holdout)


@pytest.fixture
def encoder(toy_config):
    return VideoEncoder(toy_config.encoder, derive_rng(0, "encoder"))


def test_accuracy_and_empty_inputs():
    """Accuracy is the matching fraction; empty label sets are rejected"""
    assert accuracy(np.array([0, 1, 2, 2]), np.array([0, 1, 1, 2])) == 0.75
    with pytest.raises(ShapeError):
        accuracy(np.array([]), np.array([]))


def test_average_precision_interpolates():
    """Hits at ranks 1 and 3 give (1 + 2/3) / 2"""
    ap = average_precision(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
    assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)
    assert average_precision(np.array([0.1, 0.9]), np.array([0, 1])) == 1.0


def test_mean_average_precision_skips_background_and_empty_classes():
    """Excluded names and classes without positives do not enter the mean"""
    scores = np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.5]])
    targets = np.array([[1, 0, 0], [0, 0, 1]])
    value = mean_average_precision(scores, targets, ["a", "b", "static"], exclude=("static",))
    assert value == 1.0


def test_stratified_average_weights_groups_equally():
    """Each task group counts once regardless of its size"""
    assert stratified_average({"appearance": [1.0, 1.0, 1.0], "motion": [0.0]}) == 0.5
    with pytest.raises(ShapeError):
        stratified_average({})


def test_match_ranks_break_ties_toward_lower_index():
    """With all scores equal, query i ranks behind the i earlier items"""
    np.testing.assert_array_equal(match_ranks(np.ones((4, 4))), [0, 1, 2, 3])
    np.testing.assert_array_equal(match_ranks(np.eye(3)), [0, 0, 0])


def test_retrieval_eval_perfect_and_reversed():
    """Identical embeddings retrieve perfectly in both directions"""
    emb = np.eye(6)
    result = retrieval_eval(emb, emb)
    assert result.metrics()["t2v_r@1"] == 1.0
    assert result.metrics()["v2t_r@5"] == 1.0
    shifted = retrieval_eval(emb, np.roll(emb, 1, axis=0))
    assert shifted.text_to_video[1] == 0.0


def test_gallery_retrieval_drops_partial_gallery():
    """Ten pairs in galleries of four use two full galleries"""
    emb = np.eye(10)
    assert gallery_retrieval(emb, emb, 4).gallery_size == 4
    assert gallery_retrieval(emb[:3], emb[:3], 4).gallery_size == 3
    records = gallery_retrieval(emb, emb, 4).to_records("retrieval", "zero-shot", seed=0)
    assert {r.metric for r in records} == {"t2v_r@1", "t2v_r@5", "v2t_r@1", "v2t_r@5"}


def test_prompt_texts_are_class_major():
    """All templates of class 0 come before class 1"""
    prompts = prompt_texts(["red", "blue"], ["a {}.", "the {} one"])
    assert prompts == ["a red.", "the red one", "a blue.", "the blue one"]
    with pytest.raises(ConfigError):
        prompt_texts([], ["a {}."])
    with pytest.raises(ConfigError):
        prompt_texts(["red"], [])


def test_zero_shot_scores_average_templates():
    """A class scores the mean similarity over its prompts"""
    video = np.array([[1.0, 0.0]])
    prompts = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(zero_shot_scores(video, prompts, 2), [[0.5, 0.0]])


def test_task_labels(toy_corpus):
    """Single-label tasks index sorted class names; multilabel is multi-hot over factors"""
    motion = task_labels(toy_corpus.records, "motion")
    assert motion.classes == sorted({r.motion for r in toy_corpus.records})
    assert len(motion) == len(toy_corpus)
    multi = task_labels(toy_corpus.records, "multilabel")
    assert multi.multilabel
    np.testing.assert_array_equal(multi.targets.sum(axis=1), 3)
    with pytest.raises(ConfigError):
        task_labels(toy_corpus.records, "texture")
    with pytest.raises(CorpusError):
        task_labels(toy_corpus.records, "motion", classes=["left"])


def test_split_task_shares_classes(splits):
    """Train and held-out labels use one class list"""
    train, held_out = splits
    a, b = split_task(train, held_out, "appearance")
    assert a.classes == b.classes


def test_head_init_depends_only_on_seed_and_kind(toy_config):
    """Two heads built with the same seed and kind are identical"""
    a = build_head(toy_config, "map", 4, seed=2)
    b = build_head(toy_config, "map", 4, seed=2)
    assert parameter_hash(a) == parameter_hash(b)
    with pytest.raises(ConfigError):
        build_head(toy_config, "linear-after-map", 4, seed=2)


@pytest.mark.parametrize("kind", ["map", "mlap"])
def test_probe_leaves_backbone_untouched(toy_config, splits, encoder, kind):
    """Frozen probes only train head weights"""
    train, held_out = splits
    before = parameter_hash(encoder)
    result = probe_train(toy_config, encoder, train, held_out, seed=0, kind=kind, task="motion")
    assert parameter_hash(encoder) == before == result.backbone_hash
    assert 0.0 <= result.value <= 1.0
    assert result.metric == "accuracy"
    assert result.regime == ("mlap" if kind == "mlap" else "frozen")
    assert len(result.history.steps) == toy_config.probe.steps


def test_linear_after_map_uses_pretrained_pooler(toy_config, splits, encoder, toy_corpus):
    """The copied pooler stays frozen; only the classifier trains"""
    train, held_out = splits
    stage1 = DualEncoder(toy_config, build_vocabulary([toy_corpus]), derive_rng(0, "stage1"))
    pooler_hash = parameter_hash(stage1.head.map_head)
    result = probe_train(
        toy_config, encoder, train, held_out, seed=0, kind="linear-after-map", task="color",
        pooler=stage1.head.map_head,
    )
    assert parameter_hash(result.head.pool) == pooler_hash
    assert result.head.classifier.d_in == toy_config.stage1.proj_dim


def test_multilabel_probe_reports_map(toy_config, splits, encoder):
    """Multi-label tasks are scored with mean average precision"""
    train, held_out = splits
    result = probe_train(toy_config, encoder, train, held_out, seed=0, task="multilabel")
    assert result.metric == "mAP"
    assert 0.0 <= result.value <= 1.0


def test_lora_adapters_start_as_identity(toy_config, encoder, toy_corpus):
    """A fresh adapter leaves encoder outputs unchanged; removal restores the plain layers"""
    pixels = toy_corpus.take(range(2)).pixels
    with no_grad():
        before = encoder(pixels).tokens().data
    adapted = clone_encoder(encoder)
    names = lora_inject(adapted, rank=2, alpha=4.0, rng=derive_rng(0, "lora"))
    assert names
    assert lora_parameter_count(adapted) > 0
    assert set(adapted.trainable_parameters()) == {
        name for name in adapted.parameters() if "lora_" in name
    }
    with no_grad():
        np.testing.assert_allclose(adapted(pixels).tokens().data, before, atol=1e-6)
    remove_lora(adapted)
    assert lora_parameter_count(adapted) == 0


def test_lora_train_keeps_pretrained_weights(toy_config, splits, encoder):
    """LoRA moves adapters only and never touches the caller's encoder"""
    train, held_out = splits
    original = parameter_hash(encoder)
    result = lora_train(toy_config, encoder, train, held_out, seed=0, task="motion")
    assert parameter_hash(encoder) == original
    assert result.backbone_hash == original
    assert backbone_hash(result.encoder) == original
    assert result.regime == "lora"


def test_finetune_moves_a_copy(toy_config, splits, encoder):
    """End-to-end tuning changes the copy and leaves the input encoder alone"""
    train, held_out = splits
    original = parameter_hash(encoder)
    result = finetune_e2e(toy_config, encoder, train, held_out, seed=0, task="motion")
    assert parameter_hash(encoder) == original
    assert result.backbone_hash != original
    assert result.regime == "finetune"
    assert max(s.lr for s in result.history.steps) <= toy_config.finetune.optim.lr


def test_lit_tune_locks_video_encoder(toy_config, toy_corpus, encoder):
    """Only the text tower and head train against the locked encoder"""
    stage1 = DualEncoder(toy_config, build_vocabulary([toy_corpus]), derive_rng(0, "stage1"))
    text_before = parameter_hash(stage1.text)
    result = lit_tune(toy_config, stage1, encoder.state_dict(), [toy_corpus], seed=0)
    assert result.video_hash == parameter_hash(encoder)
    assert parameter_hash(result.model.video) == parameter_hash(encoder)
    assert parameter_hash(result.model.text) != text_before
    assert parameter_hash(stage1.text) == text_before
    assert result.checkpoint.kind == "lit"
    assert result.checkpoint.meta["video_hash"] == result.video_hash


def test_zero_shot_and_retrieval_on_toy_model(toy_config, splits, toy_corpus):
    """Evaluation entry points return bounded scores on an untrained model"""
    _, held_out = splits
    model = DualEncoder(toy_config, build_vocabulary([toy_corpus]), derive_rng(0, "model"))
    score = evaluate_zero_shot(model, held_out, "motion", ["a video of {}."], batch_size=4)
    assert 0.0 <= score <= 1.0
    result = evaluate_retrieval(model, held_out, gallery_size=4, batch_size=4)
    assert result.gallery_size == 4
    assert all(0.0 <= v <= 1.0 for v in result.metrics().values())


def test_segment_retrieval_needs_segments(toy_config, toy_corpus):
    """Multi-segment clips are scored per segment; single-segment corpora are rejected"""
    model = DualEncoder(toy_config, build_vocabulary([toy_corpus]), derive_rng(0, "model"))
    with pytest.raises(CorpusError):
        segment_retrieval_eval(model, toy_corpus)
    spec = toy_config.corpus.model_copy(update={"segments": 2, "n_clips": 4})
    segmented = Corpus.from_spec(spec, seed=0, name="segments")
    assert segmented.frames.shape[1] == 2 * toy_config.corpus.frames
    assert 0.0 <= segment_retrieval_eval(model, segmented, batch_size=2) <= 1.0


def test_random_embeddings_retrieve_at_chance():
    """Unrelated unit embeddings over 100 pairs average R@1 near 1/100"""
    recalls = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        video = rng.normal(size=(100, 16))
        text = rng.normal(size=(100, 16))
        video /= np.linalg.norm(video, axis=1, keepdims=True)
        text /= np.linalg.norm(text, axis=1, keepdims=True)
        result = retrieval_eval(video, text)
        recalls.extend([result.text_to_video[1], result.video_to_text[1]])
    assert np.mean(recalls) == pytest.approx(0.01, abs=0.005)


@pytest.fixture(scope="module")
def pretrained():
    """Default-scale Stage 1 model with its (train, held-out) split"""
    from src.config import AppConfig

    cfg = AppConfig()
    train, held_out = Corpus.from_spec(cfg.corpus, seed=0).split(cfg.corpus.holdout)
    return cfg, train, held_out, train_stage1(cfg, [train], seed=0).model


@pytest.mark.slow
def test_stage1_retrieval_beats_chance(pretrained):
    """Default-scale Stage 1 retrieves held-out captions at five times chance"""
    cfg, _, held_out, model = pretrained
    retrieval = evaluate_retrieval(model, held_out, cfg.eval.gallery_size, cfg.eval.batch_size)
    assert retrieval.text_to_video[1] >= 5.0 / retrieval.gallery_size


@pytest.mark.slow
def test_noisy_captions_score_lower_alignment(pretrained):
    """A trained model scores corrupted captions below clean ones on the same clips"""
    from src.corpus import corpus_stats
    from src.main import alignment_scorer

    cfg, _, _, model = pretrained
    spec = cfg.corpus.model_copy(update={"n_clips": 64})
    clean = Corpus.from_spec(spec, seed=1)
    noisy = Corpus.from_spec(spec.model_copy(update={"tier": "noisy", "noise_rate": 1.0}), seed=1)
    clean_stats = corpus_stats(clean.records, clean.name, alignment_scorer(model, clean, cfg.eval.batch_size))
    noisy_stats = corpus_stats(noisy.records, noisy.name, alignment_scorer(model, noisy, cfg.eval.batch_size))
    assert noisy_stats.alignment.mean < clean_stats.alignment.mean


@pytest.mark.slow
def test_finetune_keeps_up_with_frozen_probe(pretrained):
    """End-to-end tuning from the same backbone, seed and task loses at most two points"""
    cfg, train, held_out, model = pretrained
    frozen = probe_train(cfg, model.video, train, held_out, seed=0, kind="map", task="motion")
    tuned = finetune_e2e(cfg, model.video, train, held_out, seed=0, kind="map", task="motion")
    assert tuned.value >= frozen.value - 0.02
