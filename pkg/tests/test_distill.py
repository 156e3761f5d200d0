"""Unit tests for token shuffling, the distillation losses and the Stage-2 model"""

import numpy as np
import pytest

from src.autograd import check_gradients, no_grad, ops, precision
from src.autograd.tensor import Tensor
from src.errors import CheckpointError, ShapeError
from src.masking import sample_mask, sample_tube_mask
from src.model.decoder import LocalDecoder, shuffle_fill
from src.model.encoder import VideoEncoder
from src.model.params import parameter_hash
from src.model.text import Vocabulary
from src.rng import derive_rng
from src.storage import Checkpoint, load_checkpoint, save_checkpoint
from src.training import (
    DistillTargets,
    DualEncoder,
    Stage2Model,
    cosine_distance_loss,
    encode_visible,
    make_optimizer,
    stage2_checkpoint,
    stage2_loss,
    student_encoder_state,
    teacher_targets,
    train_stage2,
)


def toy_pixels(cfg, batch, seed=0):
    enc = cfg.encoder
    return np.random.default_rng(seed).random((batch, enc.frames, enc.height, enc.width, 3))


def random_targets(cfg, batch, seed=0):
    rng = np.random.default_rng(seed)
    enc = cfg.encoder
    return DistillTargets(
        rng.normal(size=(batch, enc.num_tokens, enc.embed_dim)),
        rng.normal(size=(batch, cfg.stage1.proj_dim)),
    )


def test_shuffle_fill_uses_every_source_once():
    """Each visible row and each mask copy occupies exactly one slot"""
    rng = np.random.default_rng(0)
    visible = Tensor(rng.normal(size=(2, 3, 4)))
    valid = np.array([[True, True, True], [True, True, False]])
    mask_emb = Tensor(np.zeros(4))
    pos_emb = Tensor(rng.normal(size=(6, 4)))
    result = shuffle_fill(visible, mask_emb, pos_emb, rng=derive_rng(0, "shuffle"), valid=valid)

    assert result.inputs.shape == (2, 6, 4)
    assert result.visible_count.tolist() == [3, 2]
    assert sorted(result.source[0].tolist()) == [0, 1, 2, 3, 4, 5]
    assert sorted(result.source[1].tolist()) == [0, 1, 3, 4, 5, 6]
    for row in range(2):
        assert sorted(result.perm[row].tolist()) == list(range(6))


def test_shuffle_fill_adds_pos_emb_in_slot_order():
    """Slot i receives positional row i whatever content lands there"""
    rng = np.random.default_rng(1)
    visible = Tensor(rng.normal(size=(1, 2, 3)))
    pos_emb = Tensor(rng.normal(size=(5, 3)))
    result = shuffle_fill(visible, Tensor(np.ones(3)), pos_emb, rng=derive_rng(1, "shuffle"))
    np.testing.assert_allclose(result.inputs.data - result.content.data, pos_emb.data[None])


def test_unshuffled_fill_puts_tokens_in_canonical_slots():
    """Without shuffling, a visible token at position p sits in slot p"""
    rng = np.random.default_rng(2)
    visible = Tensor(rng.normal(size=(1, 2, 3)))
    mask_emb = Tensor(np.full(3, 7.0))
    pos_emb = Tensor(np.zeros((5, 3)))
    result = shuffle_fill(visible, mask_emb, pos_emb, positions=np.array([[1, 4]]), shuffle=False)
    content = result.content.data[0]
    np.testing.assert_allclose(content[1], visible.data[0, 0])
    np.testing.assert_allclose(content[4], visible.data[0, 1])
    np.testing.assert_allclose(content[[0, 2, 3]], 7.0)
    np.testing.assert_array_equal(result.perm[0], np.arange(5))


def test_shuffle_fill_argument_errors():
    """Shuffling needs an rng and m cannot exceed n"""
    visible = Tensor(np.zeros((1, 2, 3)))
    with pytest.raises(ValueError):
        shuffle_fill(visible, Tensor(np.zeros(3)), Tensor(np.zeros((4, 3))))
    with pytest.raises(ShapeError):
        shuffle_fill(Tensor(np.zeros((1, 5, 3))), Tensor(np.zeros(3)), Tensor(np.zeros((4, 3))),
                     rng=np.random.default_rng(0))


def test_cosine_distance_hits_zero_one_two():
    """Aligned, orthogonal and opposed pairs give 0, 1 and 2"""
    with precision(np.float64):
        pred = Tensor(np.array([[1.0, 0.0]]))
        for target, expected in (([[3.0, 0.0]], 0.0), ([[0.0, 2.0]], 1.0), ([[-1.0, 0.0]], 2.0)):
            loss = cosine_distance_loss(pred, np.array(target))
            assert abs(float(loss.data) - expected) < 1e-7


def test_cosine_distance_row_weights():
    """Weights restrict the mean to selected rows; an empty selection is an error"""
    pred = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
    target = np.array([[1.0, 0.0], [-1.0, 0.0]])
    loss = cosine_distance_loss(pred, target, weights=np.array([0.0, 1.0]))
    assert float(loss.data) == pytest.approx(2.0)
    with pytest.raises(ShapeError):
        cosine_distance_loss(pred, target, weights=np.zeros(2))
    with pytest.raises(ShapeError):
        cosine_distance_loss(pred, np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(20))
def test_unmasked_unshuffled_loss_matches_plain_regression(toy_config, seed):
    """With no masking and identity order the loss is full-sequence token regression"""
    cfg = toy_config.replace(**{"stage2.shuffle": False, "stage2.global_distill": False})
    enc = cfg.encoder
    with precision(np.float64):
        model = Stage2Model(cfg, derive_rng(seed, "model"))
        pixels = toy_pixels(cfg, 2, seed)
        targets = random_targets(cfg, 2, seed)
        masks = [sample_tube_mask(enc.frames, enc.num_spatial, 0.0, seed)] * 2
        with no_grad():
            loss = stage2_loss(pixels, model, masks, targets, derive_rng(seed, "shuffle"), cfg.stage2)
            tokens = model.student(pixels).tokens()
            pos_emb = model.local_decoder.pos_emb
            pred = model.local_decoder(tokens + ops.reshape(pos_emb, (1,) + pos_emb.shape)).data

    unit = lambda x: x / np.linalg.norm(x, axis=-1, keepdims=True)  # noqa: E731
    reference = np.mean(1.0 - np.sum(unit(pred) * unit(targets.tokens), axis=-1))
    assert abs(float(loss.total.data) - reference) < 1e-6
    assert loss.global_ is None


def test_tube_drop_matches_hidden_tokens(toy_config):
    """Dropping tube columns and hiding them from attention give the same visible outputs"""
    cfg = toy_config.replace(**{"encoder.height": 24, "encoder.width": 24})
    enc = cfg.encoder
    with precision(np.float64):
        student = VideoEncoder(enc, derive_rng(0, "student"))
        pixels = toy_pixels(cfg, 1)
        mask = sample_tube_mask(enc.frames, enc.num_spatial, 0.5, seed=3)
        with no_grad():
            dropped = encode_visible(student, pixels, [mask])
            hidden = student(pixels, visible=mask.visible[None]).tokens().data
    np.testing.assert_array_equal(dropped.index[0], np.flatnonzero(mask.visible.reshape(-1)))
    np.testing.assert_allclose(dropped.values.data[0], hidden[0, dropped.index[0]], atol=1e-10)


def test_stage2_loss_gradients(toy_config):
    """The full Stage-2 loss (blockwise masks, shuffle, both terms) passes the f64 gradient check"""
    cfg = toy_config
    enc = cfg.encoder
    block_params = cfg.masking.model_copy(update={"min_block": 1})
    with precision(np.float64):
        model = Stage2Model(cfg, derive_rng(0, "model"))
        pixels = toy_pixels(cfg, 2)
        targets = random_targets(cfg, 2)
        masks = [
            sample_mask("blockwise", enc.frames, enc.grid_h, enc.grid_w, 0.5, seed=i, params=block_params)
            for i in range(2)
        ]

        def loss():
            return stage2_loss(pixels, model, masks, targets, derive_rng(0, "shuffle"), cfg.stage2).total

        params = model.parameters()
        names = [
            "student.patch_embed.weight",
            "student.pos.temporal",
            "local_decoder.mask_emb",
            "local_decoder.pos_emb",
            "global_decoder.map_head.query",
        ]
        results = check_gradients(loss, {name: params[name] for name in names}, max_elements=8)
    for name, result in results.items():
        assert result.passed, f"{name}: rel err {result.max_rel_error:.2e}"


def test_masked_only_weights_masked_positions(toy_config):
    """masked_only leaves visible-slot predictions out of the token term"""
    cfg = toy_config.replace(**{"stage2.masked_only": True, "stage2.global_distill": False})
    enc = cfg.encoder
    with precision(np.float64):
        model = Stage2Model(cfg, derive_rng(0, "model"))
        pixels = toy_pixels(cfg, 1)
        targets = random_targets(cfg, 1)
        mask = sample_tube_mask(enc.frames, enc.num_spatial, 0.5, seed=1)
        with no_grad():
            losses = stage2_loss(pixels, model, [mask], targets, derive_rng(0, "s"), cfg.stage2)
            perturbed = DistillTargets(targets.tokens.copy(), targets.pooled)
            perturbed.tokens[0, mask.visible.reshape(-1)] *= -1.0
            again = stage2_loss(pixels, model, [mask], perturbed, derive_rng(0, "s"), cfg.stage2)
    assert float(losses.total.data) == pytest.approx(float(again.total.data))


def test_teacher_targets_shapes(toy_config):
    """Teacher tokens cover every position; pooled targets live in the projection space"""
    cfg = toy_config
    teacher = DualEncoder(cfg, Vocabulary.build(["a red circle"]), derive_rng(0, "teacher"))
    targets = teacher_targets(toy_pixels(cfg, 3), teacher)
    assert targets.tokens.shape == (3, cfg.encoder.num_tokens, cfg.encoder.embed_dim)
    assert targets.pooled.shape == (3, cfg.stage1.proj_dim)


def test_stage2_checkpoint_keeps_only_student_for_downstream(toy_config, temp_output_dir):
    """Decoders are flagged discardable; the student loads back by prefix"""
    cfg = toy_config
    model = Stage2Model(cfg, derive_rng(0, "model"))
    state = make_optimizer(cfg.stage2.optim, model.trainable_parameters())
    ckpt = stage2_checkpoint(model, state, step=5, teacher_hash="abc")
    path = f"{temp_output_dir}/stage2.ckpt"
    save_checkpoint(ckpt, path)

    restored = load_checkpoint(path, prefix="student.")
    assert restored.params
    assert all(name.startswith("student.") for name in restored.params)
    assert set(restored.discardable) == {"local_decoder.", "global_decoder."}

    encoder = VideoEncoder(cfg.encoder, derive_rng(1, "other"))
    encoder.load_state_dict(student_encoder_state(load_checkpoint(path)))
    assert parameter_hash(encoder) == parameter_hash(model.student)


def test_student_state_needs_encoder_weights():
    """A checkpoint with no encoder parameters cannot seed a student"""
    ckpt = Checkpoint(kind="stage2", step=0, params={"local_decoder.mask_emb": np.zeros(2)})
    with pytest.raises(CheckpointError):
        student_encoder_state(ckpt)


def test_train_stage2_keeps_teacher_frozen(toy_config, toy_corpus):
    """A short run updates the student, leaves the teacher untouched and records losses"""
    cfg = toy_config
    teacher = DualEncoder(cfg, Vocabulary.build(toy_corpus.captions), derive_rng(0, "teacher"))
    before = parameter_hash(teacher)
    result = train_stage2(cfg, teacher, toy_corpus, seed=0)
    assert parameter_hash(teacher) == before
    assert len(result.history.losses) == cfg.stage2.steps
    assert all(np.isfinite(result.history.losses))
    assert parameter_hash(result.model.student) != parameter_hash(teacher.video)
    assert result.checkpoint.meta["teacher_hash"] == before
    assert "last_mask" in result.checkpoint.meta


def test_train_stage2_is_deterministic(toy_config, toy_corpus):
    """Two runs with the same seed produce identical students"""
    cfg = toy_config.replace(**{"stage2.steps": 2})
    teacher = DualEncoder(cfg, Vocabulary.build(toy_corpus.captions), derive_rng(0, "teacher"))
    a = train_stage2(cfg, teacher, toy_corpus, seed=4)
    b = train_stage2(cfg, teacher, toy_corpus, seed=4)
    assert parameter_hash(a.model) == parameter_hash(b.model)
    assert a.history.losses == b.history.losses


def test_resume_requires_the_same_teacher(toy_config, toy_corpus):
    """A Stage-2 checkpoint from another teacher is rejected"""
    cfg = toy_config.replace(**{"stage2.steps": 1})
    vocab = Vocabulary.build(toy_corpus.captions)
    first = train_stage2(cfg, DualEncoder(cfg, vocab, derive_rng(0, "t")), toy_corpus, seed=0)
    other = DualEncoder(cfg, vocab, derive_rng(1, "t"))
    with pytest.raises(CheckpointError):
        train_stage2(cfg, other, toy_corpus, seed=0, resume=first.checkpoint)


class SlotReadout(LocalDecoder):
    """Local decoder whose predictions are a free leaf, so slot gradients can be read"""

    def __call__(self, inputs):
        return self.slots


def test_token_loss_pairs_each_slot_with_its_canonical_target(toy_config):
    """Only the slot paired with a planted target row receives gradient, shuffle or not"""
    cfg = toy_config.replace(**{"stage2.global_distill": False})
    enc = cfg.encoder
    n, d = enc.num_tokens, enc.embed_dim
    block_params = cfg.masking.model_copy(update={"min_block": 1})
    for planted in range(n):
        with precision(np.float64):
            model = Stage2Model(cfg, derive_rng(0, "model"))
            readout = SlotReadout(d, n, cfg.decoder, derive_rng(1, "readout"))
            readout.slots = Tensor(np.random.default_rng(2).normal(size=(1, n, d)), requires_grad=True)
            model.local_decoder = readout
            tokens = np.zeros((1, n, d))
            tokens[0, planted] = np.arange(1.0, d + 1.0)
            targets = DistillTargets(tokens, np.zeros((1, cfg.stage1.proj_dim)))
            mask = sample_mask("blockwise", enc.frames, enc.grid_h, enc.grid_w, 0.5, seed=0, params=block_params)
            losses = stage2_loss(toy_pixels(cfg, 1), model, [mask], targets, derive_rng(0, "shuffle"), cfg.stage2)
            losses.total.backward()
        rows = np.flatnonzero(np.abs(readout.slots.grad[0]).sum(axis=-1) > 0)
        assert rows.tolist() == [planted]


def test_resume_reproduces_uninterrupted_run(toy_config, toy_corpus, temp_output_dir):
    """Stopping at a Stage-2 checkpoint and resuming gives the same final parameters"""
    cfg = toy_config.replace(**{"stage2.steps": 4, "stage2.checkpoint_every": 2})
    teacher = DualEncoder(cfg, Vocabulary.build(toy_corpus.captions), derive_rng(0, "teacher"))
    saved = []

    def keep(ckpt):
        path = f"{temp_output_dir}/stage2-step{ckpt.step}.ckpt"
        save_checkpoint(ckpt, path)
        saved.append(path)

    full = train_stage2(cfg, teacher, toy_corpus, seed=3, checkpoint_fn=keep)
    assert len(saved) == 1
    resumed = train_stage2(cfg, teacher, toy_corpus, seed=3, resume=load_checkpoint(saved[0]))
    assert parameter_hash(resumed.model) == parameter_hash(full.model)
    assert resumed.history.losses == full.history.losses[2:]
