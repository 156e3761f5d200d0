"""Unit tests for the contrastive objective, the alternating-corpus schedule and Stage-1 training"""

import math

import numpy as np
import pytest

from src.autograd import check_gradients, precision
from src.autograd.tensor import Tensor
from src.corpus import Corpus
from src.errors import CorpusError, NonFiniteError, ShapeError
from src.model.params import parameter_hash
from src.model.text import CLS_ID, PAD_ID, Vocabulary, pack_batch
from src.rng import derive_rng
from src.storage import load_checkpoint, save_checkpoint
from src.training import (
    AgdSchedule,
    DualEncoder,
    agd_next_batch,
    build_vocabulary,
    similarity_logits,
    symmetric_ce_loss,
    train_stage1,
)


@pytest.mark.parametrize("batch", [1, 2, 8, 32])
def test_symmetric_ce_of_zero_logits_is_log_batch(batch):
    """Uniform similarities cost ln B in both directions"""
    loss = symmetric_ce_loss(Tensor(np.zeros((batch, batch)), requires_grad=True))
    assert abs(float(loss.data) - math.log(batch)) < 1e-6


def test_symmetric_ce_two_by_two():
    """[[2, 0], [0, 2]] costs -ln(e^2 / (e^2 + 1))"""
    with precision(np.float64):
        loss = symmetric_ce_loss(Tensor(np.array([[2.0, 0.0], [0.0, 2.0]])))
    assert float(loss.data) == pytest.approx(-math.log(math.e ** 2 / (math.e ** 2 + 1)), abs=1e-9)
    assert float(loss.data) == pytest.approx(0.1269, abs=1e-4)


def test_symmetric_ce_needs_square_logits():
    """Non-square or empty logits are shape errors"""
    with pytest.raises(ShapeError):
        symmetric_ce_loss(Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        symmetric_ce_loss(Tensor(np.zeros((0, 0))))


def test_similarity_logits_rejects_bad_temperature():
    """Zero or non-finite temperatures never reach the softmax"""
    emb = Tensor(np.eye(2))
    with pytest.raises(NonFiniteError):
        similarity_logits(emb, emb, 0.0)
    np.testing.assert_allclose(similarity_logits(emb, emb, 0.5).data, 2 * np.eye(2))


def test_pack_batch_appends_class_token():
    """Words are truncated to max_len - 1, then the class id, then padding"""
    packed = pack_batch([[5, 6], [5, 6, 7, 8, 9]], max_len=4)
    np.testing.assert_array_equal(packed[0], [5, 6, CLS_ID, PAD_ID])
    np.testing.assert_array_equal(packed[1], [5, 6, 7, CLS_ID])


def test_vocabulary_round_trip():
    """Frequent words get low ids and the list form restores the same table"""
    vocab = Vocabulary.build(["a red circle", "a blue circle", "a red square"])
    assert vocab.itos[3] == "a"
    assert Vocabulary.from_list(vocab.to_list()).stoi == vocab.stoi
    assert vocab.decode(vocab.encode("A red, circle!")) == "a red circle"


def test_stage1_loss_gradients(toy_config, toy_corpus):
    """Video tower, text tower, MAP head and temperature all pass the f64 gradient check"""
    cfg = toy_config
    batch = toy_corpus.take(range(3))
    keep = np.array([[0, 2], [1, 3], [0, 1]])
    with precision(np.float64):
        model = DualEncoder(cfg, build_vocabulary([toy_corpus]), derive_rng(0, "model"))

        def loss():
            video = model.embed_video(batch.pixels, keep_spatial=keep)
            return model.loss(video, model.embed_text(batch.captions))

        params = model.parameters()
        names = ["video.patch_embed.weight", "text.token_emb", "head.map_head.query", "head.log_tau"]
        results = check_gradients(loss, {name: params[name] for name in names}, max_elements=8)
    for name, result in results.items():
        assert result.passed, f"{name}: rel err {result.max_rel_error:.2e}"


def test_agd_interleaves_by_size():
    """A corpus with three quarters of the clips supplies three of every four batches"""
    schedule = AgdSchedule([300, 100])
    assert schedule.period == 4
    assert schedule.cycle.count(0) == 3
    assert schedule.counts(400) == [300, 100]
    assert schedule.counts(6) == [5, 1]


def test_agd_draw_indices_are_consecutive():
    """Each corpus sees draws 0, 1, 2, ... in order"""
    schedule = AgdSchedule([2, 1, 1])
    draws = {0: [], 1: [], 2: []}
    for step in range(16):
        corpus, draw = schedule.assign(step)
        draws[corpus].append(draw)
    for seen in draws.values():
        assert seen == list(range(len(seen)))
    assert [len(v) for v in draws.values()] == [8, 4, 4]


def test_agd_needs_a_non_empty_corpus():
    """All-empty corpus lists are rejected"""
    with pytest.raises(CorpusError):
        AgdSchedule([0, 0])


def test_agd_batches_are_homogeneous(toy_config):
    """Every batch is drawn wholly from one corpus"""
    video = Corpus.from_spec(toy_config.corpus, seed=0, name="video")
    image_spec = toy_config.corpus.model_copy(update={"kind": "image", "frames": 1, "n_clips": 8})
    image = Corpus.from_spec(image_spec, seed=0, name="image")
    for step in range(8):
        index, batch = agd_next_batch([video, image], step, seed=0, batch_size=4)
        assert batch.corpus == ("video", "image")[index]
        assert len({r.kind for r in batch.records}) == 1


def test_train_stage1_is_deterministic(toy_config, toy_corpus):
    """Equal seeds give bit-identical models and loss curves"""
    a = train_stage1(toy_config, [toy_corpus], seed=3)
    b = train_stage1(toy_config, [toy_corpus], seed=3)
    assert parameter_hash(a.model) == parameter_hash(b.model)
    assert a.history.losses == b.history.losses
    assert all(np.isfinite(a.history.losses))
    assert a.checkpoint.step == toy_config.stage1.steps


def test_train_stage1_mixes_images_and_videos(toy_config, toy_corpus):
    """Image corpora train alongside video corpora without token dropping"""
    image_spec = toy_config.corpus.model_copy(update={"kind": "image", "frames": 1, "n_clips": 8})
    image = Corpus.from_spec(image_spec, seed=0, name="images")
    result = train_stage1(toy_config.replace(**{"stage1.steps": 4}), [toy_corpus, image], seed=0)
    assert {step.corpus for step in result.history.steps} == {toy_corpus.name, "images"}


def test_resume_reproduces_uninterrupted_run(toy_config, toy_corpus, temp_output_dir):
    """Stopping at a checkpoint and resuming gives the same final parameters"""
    cfg = toy_config.replace(**{"stage1.steps": 4, "stage1.checkpoint_every": 2})
    saved = []

    def keep(ckpt):
        path = f"{temp_output_dir}/stage1-step{ckpt.step}.ckpt"
        save_checkpoint(ckpt, path)
        saved.append(path)

    full = train_stage1(cfg, [toy_corpus], seed=1, checkpoint_fn=keep)
    assert len(saved) == 1
    resumed = train_stage1(cfg, [toy_corpus], seed=1, resume=load_checkpoint(saved[0]))
    assert parameter_hash(resumed.model) == parameter_hash(full.model)
    assert resumed.history.losses == full.history.losses[2:]


def test_temperature_stays_above_floor(toy_config, toy_corpus):
    """The learnable temperature is clamped to stage1.temperature_min"""
    cfg = toy_config.replace(**{
        "stage1.temperature_init": 0.011,
        "stage1.temperature_min": 0.01,
        "stage1.optim.lr": 0.01,
    })
    result = train_stage1(cfg, [toy_corpus], seed=0)
    assert math.exp(float(result.model.head.log_tau.data)) >= 0.01 * (1 - 1e-6)
