"""
Unit tests for posespace: codebook, track encoders, fusion, PadMatch and the Stage-1 losses.
"""

import math
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add the shared/python directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'shared', 'python'))

import numcore as nc
import posespace
from posespace import Codebook, PoseSpaceConfig, Stage1Model
from sxtypes import (PAPER_TRACK_DIMS, PAPER_UNIFIED_WIDTH, TRACKS, ArityError, CodebookError, ContractError, DegenerateInputError,
                     DimensionError, GlossSpan, ParameterError, PoseSequence, Token)


# ------------------------------
#    HELPERS
# ------------------------------

def _model(seed: int = 0, vocab: int = 8) -> Stage1Model:
    cfg = PoseSpaceConfig(hidden_width = 8, unified_width = 16, heads = 2, latent_blocks = 1, epochs = 2, micro_batch = 2, accumulation_steps = 2)
    return Stage1Model(cfg, vocab, np.random.default_rng(seed))

def _pose(rng: np.random.Generator, glosses: list[int], frames: int = 4) -> PoseSequence:
    spans = [GlossSpan(g, i * frames, (i + 1) * frames - 1) for i, g in enumerate(glosses)]
    T = frames * len(glosses)
    tracks = {track.value: rng.normal(size = (T, dim)) for track, dim in zip(TRACKS, PoseSpaceConfig().track_dims)}
    return PoseSequence(tracks, spans)

def _identity_fusion(model: Stage1Model) -> None:
    attention = model.fusion
    for layer in (attention.value, attention.output):
        layer.weight.data[...] = np.eye(layer.weight.shape[0])
        layer.bias.data[...] = 0.0


# ------------------------------
#    CODEBOOK
# ------------------------------

@pytest.mark.posespace
def test_codebook_reserved_indices():
    codebook = Codebook(['GO', 'HEAR/LISTEN'])

    assert len(codebook) == 6
    assert codebook.index('GO') == 4
    assert codebook.encode(['HEAR/LISTEN', 'GO']) == [5, 4]
    assert codebook.decode([Token.BOS, 4, 5, Token.EOS]) == ['GO', 'HEAR/LISTEN']

@pytest.mark.posespace
def test_codebook_unknown_and_duplicate():
    with pytest.raises(CodebookError):
        Codebook(['GO']).index('STOP')
    with pytest.raises(CodebookError):
        Codebook(['GO', 'GO'])
    with pytest.raises(CodebookError):
        Codebook(['GO']).gloss(9)

@pytest.mark.posespace
def test_codebook_file(tmp_path):
    path = tmp_path / 'codebook.txt'
    Codebook(['A', 'B', 'C']).save(path)
    assert Codebook.load(path).glosses == ['A', 'B', 'C']
    assert path.read_text(encoding = 'utf-8') == 'A\nB\nC\n'


# ------------------------------
#    ENCODERS AND FUSION
# ------------------------------

@pytest.mark.posespace
def test_encode_track_shapes_and_determinism():
    model = _model()
    raw = np.random.default_rng(1).normal(size = (5, 12))

    first = posespace.encode_track(model, 'dwpose', raw)
    assert first.shape == (5, 8)
    np.testing.assert_array_equal(first.data, posespace.encode_track(model, 'dwpose', raw).data)

@pytest.mark.posespace
def test_encode_track_zero_input_zero_bias():
    model = _model()
    assert np.all(posespace.encode_track(model, 'smplerx', np.zeros(6)).data == 0.0)

@pytest.mark.posespace
def test_encode_track_wrong_width():
    with pytest.raises(DimensionError):
        posespace.encode_track(_model(), 'mediapipe', np.zeros(12))

@pytest.mark.posespace
def test_fuse_identical_features_with_identity_value():
    model = _model()
    _identity_fusion(model)
    feature = np.random.default_rng(2).normal(size = 8)

    fused, weights = posespace.fuse_attention(model, [feature] * 5)

    np.testing.assert_allclose(fused.data, feature, atol = 1e-12)
    assert weights.shape == (2, 5, 5)

@pytest.mark.posespace
def test_fuse_zero_confidence_ignores_track():
    model = _model()
    rng = np.random.default_rng(3)
    features = [rng.normal(size = 8) for _ in TRACKS]
    confidence = np.array([1.0, 1.0, 0.0, 1.0, 1.0])

    _, weights = posespace.fuse_attention(model, features, confidence)
    np.testing.assert_allclose(weights.data[..., 2], 0.0, atol = 1e-9)

@pytest.mark.posespace
def test_fuse_wrong_arity():
    with pytest.raises(ArityError):
        posespace.fuse_attention(_model(), [np.zeros(8)] * 4)

@pytest.mark.posespace
def test_pad_match_identity_projection():
    model = Stage1Model(PoseSpaceConfig(hidden_width = 4, unified_width = 6, heads = 2, latent_blocks = 1), 6, np.random.default_rng(0))
    model.pad_match.projection.weight.data[...] = np.eye(6)

    out = posespace.pad_match(model, np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.data, [1.0, 2.0, 3.0, 0.0, 0.0, 0.0])

@pytest.mark.posespace
def test_pad_match_too_wide():
    with pytest.raises(ContractError):
        posespace.pad_match(_model(), np.zeros(17))

@pytest.mark.posespace
def test_embed_frame_matches_sequence_path():
    model = _model()
    pose = _pose(np.random.default_rng(10), [4, 5])
    pose.confidence = np.tile([1.0, 0.5, 1.0, 0.0, 1.0], (pose.length, 1))

    features = [posespace.encode_track(model, track, pose.tracks[track.value]) for track in TRACKS]
    fused, _ = posespace.fuse_attention(model, features, pose.confidence)
    padded = posespace.pad_match(model, fused)

    for t in (0, 3, pose.length - 1):
        bundle = pose.frame(t)
        np.testing.assert_array_equal(bundle.confidence, pose.confidence[t])
        np.testing.assert_allclose(posespace.embed_frame(model, bundle).data, padded.data[t], atol = 1e-12)

@pytest.mark.posespace
def test_latent_encode_preserves_shape():
    model = _model()
    z = np.random.default_rng(4).normal(size = (7, 16))
    assert posespace.latent_encode(model, z).shape == (7, 16)

@pytest.mark.posespace
def test_paper_shapes_widths():
    cfg = PoseSpaceConfig.paper_shapes()
    assert sum(cfg.track_dims) == 1959
    assert cfg.unified_width == PAPER_UNIFIED_WIDTH == 2048
    assert tuple(cfg.track_dims) == PAPER_TRACK_DIMS


# ------------------------------
#    LOSSES
# ------------------------------

@pytest.mark.posespace
def test_text_loss_perfect_and_uniform():
    perfect = np.full((2, 4), -1e9)
    perfect[0, 1] = perfect[1, 3] = 0.0

    assert posespace.text_loss(perfect, [1, 3], 0.0).item() == pytest.approx(0.0, abs = 1e-9)
    assert posespace.text_loss(np.zeros((3, 4)), [0, 1, 2], 0.0).item() == pytest.approx(math.log(4))

@pytest.mark.posespace
def test_text_loss_out_of_vocab():
    with pytest.raises(CodebookError):
        posespace.text_loss(np.zeros((1, 4)), [4])

@pytest.mark.posespace
@pytest.mark.parametrize('other,expected', [
    ([1.0, 0.0], 0.0),
    ([0.0, 2.0], 1.0),
    ([-3.0, 0.0], 2.0),
])
def test_word_match_loss(other, expected):
    assert posespace.word_match_loss(np.array([[1.0, 0.0]]), np.array([other])).item() == pytest.approx(expected)

@pytest.mark.posespace
def test_word_match_zero_norm():
    with pytest.raises(DegenerateInputError):
        posespace.word_match_loss(np.zeros((1, 2)), np.ones((1, 2)))

@pytest.mark.posespace
def test_contrastive_equal_similarities_is_log_j():
    candidates = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [-1.0, 0.0, 1.0], [0.0, -1.0, 1.0]])
    loss = posespace.contrastive_loss(np.array([0.0, 0.0, 1.0]), candidates[0], candidates, 0.3)
    assert loss.item() == pytest.approx(math.log(4))

@pytest.mark.posespace
def test_contrastive_single_candidate_is_zero():
    e = np.array([0.3, -0.4])
    assert posespace.contrastive_loss(np.array([1.0, 2.0]), e, e[None, :], 0.3).item() == pytest.approx(0.0, abs = 1e-12)

@pytest.mark.posespace
def test_contrastive_bad_temperature():
    e = np.eye(2)
    with pytest.raises(ParameterError):
        posespace.contrastive_loss(np.ones(2), e[0], e, 0.0)

@pytest.mark.posespace
def test_composite_loss_weights():
    assert posespace.composite_stage1_loss(1.5, 2.0, 3.0, 0.0, 0.0, 0.0) == 0.0
    assert posespace.composite_stage1_loss(1.5, 2.0, 3.0, 1.0, 0.0, 0.0) == 1.5
    with pytest.raises(ParameterError):
        posespace.composite_stage1_loss(1.0, 1.0, 1.0, -1.0)

@pytest.mark.posespace
def test_grad_check_span_contrastive():
    rng = np.random.default_rng(5)
    z_spans = rng.normal(size = (3, 4))
    candidates = rng.normal(size = (2, 4))
    assert nc.grad_check(lambda c: posespace.span_contrastive_loss(z_spans, c, [0, 1, 0], 0.3), candidates) < 1e-4

@pytest.mark.posespace
def test_grad_check_text_loss():
    logits = np.random.default_rng(6).normal(size = (3, 6))
    assert nc.grad_check(lambda x: posespace.text_loss(x, [4, 5, 1], 0.1), logits) < 1e-4

@pytest.mark.posespace
def test_grad_check_word_match_loss():
    rng = np.random.default_rng(7)
    true = rng.normal(size = (2, 4))
    assert nc.grad_check(lambda p: posespace.word_match_loss(p, true), rng.normal(size = (2, 4))) < 1e-4

@pytest.mark.posespace
def test_grad_check_contrastive_loss():
    rng = np.random.default_rng(8)
    candidates = rng.normal(size = (4, 3))
    assert nc.grad_check(lambda z: posespace.contrastive_loss(z, candidates[1], candidates, 0.3), rng.normal(size = 3)) < 1e-4


# ------------------------------
#    TRAINING
# ------------------------------

@pytest.mark.posespace
def test_teacher_forcing_decays_linearly():
    cfg = PoseSpaceConfig(epochs = 5)
    assert [posespace.teacher_forcing_ratio(e, cfg) for e in range(5)] == pytest.approx([0.5, 0.375, 0.25, 0.125, 0.0])

@pytest.mark.posespace
@pytest.mark.parametrize('index,n_micro,steps,expected', [
    (0, 5, 2, 2),
    (3, 5, 2, 2),
    (4, 5, 2, 1),
    (0, 3, 4, 3),
    (2, 3, 4, 3),
    (6, 7, 7, 7),
])
def test_accumulation_group_size(index, n_micro, steps, expected):
    assert posespace.accumulation_group_size(index, n_micro, steps) == expected

@pytest.mark.posespace
@pytest.mark.slow
def test_short_accumulation_group_is_a_plain_mean():
    rng = np.random.default_rng(9)
    corpus = [_pose(rng, [4, 5]), _pose(rng, [6, 7])]
    single, accumulated = _model(), _model()

    posespace.train_stage1(single, corpus, replace(single.cfg, micro_batch = 2, accumulation_steps = 1), seed = 4)
    posespace.train_stage1(accumulated, corpus, replace(accumulated.cfg, micro_batch = 2, accumulation_steps = 4), seed = 4)

    for a, b in zip(single.trainable_parameters(), accumulated.trainable_parameters()):
        np.testing.assert_array_equal(a.data, b.data)

@pytest.mark.posespace
@pytest.mark.slow
def test_train_stage1_is_deterministic(tmp_path):
    rng = np.random.default_rng(6)
    corpus = [_pose(rng, [4, 5]), _pose(rng, [6]), _pose(rng, [7, 4]), _pose(rng, [5, 6])]

    first = posespace.train_stage1(_model(), corpus, _model().cfg, seed = 3, log_path = tmp_path / 'a.jsonl')
    second = posespace.train_stage1(_model(), corpus, _model().cfg, seed = 3)

    assert first.curve() == second.curve()
    assert len(first.records) == 2
    assert all(math.isfinite(v) for v in first.curve())
    assert len((tmp_path / 'a.jsonl').read_text(encoding = 'utf-8').splitlines()) == 2

@pytest.mark.posespace
def test_train_stage1_rejects_unknown_gloss():
    pose = _pose(np.random.default_rng(7), [12])
    with pytest.raises(CodebookError):
        posespace.train_stage1(_model(vocab = 8), [pose], _model().cfg, seed = 0)
