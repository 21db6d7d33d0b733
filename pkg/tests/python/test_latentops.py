"""
Unit tests for latentops: feature compilation, prune masks, augmentation and the feature container.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the shared/python directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'shared', 'python'))

import latentops
import numcore as nc
from latentops import AugmentConfig, CompileConfig, CompileState, Container, PruneMask, Record
from sxtypes import (ContainerFormatError, DimensionError, DuplicateKeyError, GlossSpan, InsufficientDataError, LatentSequence,
                     RecordNotFoundError, Token)


# ------------------------------
#    COMPILATION
# ------------------------------

@pytest.mark.latentops
def test_cross_cov_centered_product():
    out = latentops.cross_cov(np.array([1.0, 2.0]), np.array([3.0, 0.0]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(out, [0.0, -1.0])

@pytest.mark.latentops
def test_cross_cov_width_mismatch():
    with pytest.raises(DimensionError):
        latentops.cross_cov(np.zeros(2), np.zeros(3), np.zeros(2))

@pytest.mark.latentops
def test_compile_without_whitening_or_drop_is_layer_norm(make_latent):
    seq = make_latent(np.random.default_rng(0), [4, 5], frames_per_gloss = 3, width = 6)
    out = latentops.compile_sequence(seq, CompileConfig(gamma = 0.0, rho = 0.0))

    for t in range(seq.length):
        np.testing.assert_allclose(out.z[t], nc.layer_norm(seq.z[t], eps = 1e-5).data)
    assert out.m.tolist() == [1] * 6
    assert out.a.tolist() == [4, 4, 4, 5, 5, 5]

@pytest.mark.latentops
def test_compile_whitening_leaves_first_frame(make_latent):
    seq = make_latent(np.random.default_rng(1), [4], frames_per_gloss = 4, width = 6)
    plain = latentops.compile_sequence(seq, CompileConfig(gamma = 0.0, rho = 0.0))
    whitened = latentops.compile_sequence(seq, CompileConfig(gamma = 0.5, rho = 0.0))

    np.testing.assert_allclose(whitened.z[0], plain.z[0])
    assert not np.allclose(whitened.z[1:], plain.z[1:])

@pytest.mark.latentops
def test_compile_full_drop(make_latent):
    seq = make_latent(np.random.default_rng(2), [4, 5], frames_per_gloss = 2, width = 4)
    out = latentops.compile_sequence(seq, CompileConfig(rho = 1.0))

    assert not out.m.any()
    assert not out.z.any()

@pytest.mark.latentops
def test_compile_drop_is_deterministic(make_latent):
    seq = make_latent(np.random.default_rng(3), [4, 5, 6], frames_per_gloss = 10, width = 4)
    cfg = CompileConfig(rho = 0.3, seed = 11)

    first = latentops.compile_sequence(seq, cfg, CompileState(), stream = 2)
    second = latentops.compile_sequence(seq, cfg, CompileState(), stream = 2)

    np.testing.assert_array_equal(first.m, second.m)
    np.testing.assert_array_equal(first.z, second.z)

@pytest.mark.latentops
@pytest.mark.slow
def test_compile_drop_fraction_matches_rho():
    T, rho = 10_000, 0.05
    seq = LatentSequence.from_features(np.random.default_rng(4).normal(size = (T, 4)), [])
    out = latentops.compile_sequence(seq, CompileConfig(gamma = 0.0, rho = rho))

    dropped = T - int(out.m.sum())
    assert abs(dropped - rho * T) <= 3 * math.sqrt(T * rho * (1 - rho))

@pytest.mark.latentops
def test_gloss_align_cases():
    spans = [GlossSpan(4, 0, 5), GlossSpan(5, 5, 9)]

    assert latentops.gloss_align(5, [GlossSpan(7, 3, 9)]) == 7
    assert latentops.gloss_align(5, spans) == 4
    assert latentops.gloss_align(6, spans) == 5
    assert latentops.gloss_align(12, spans) == Token.PAD


# ------------------------------
#    PRUNING
# ------------------------------

def _variance_batch() -> list[LatentSequence]:
    """Two frames whose per-dimension unbiased variances are 0, 0.5 and 2.0."""
    return [LatentSequence.from_features(np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 2.0]]), [])]


@pytest.mark.latentops
def test_prune_mask_threshold():
    mask = latentops.build_prune_mask(_variance_batch(), 1.0)

    np.testing.assert_allclose(mask.variances, [0.0, 0.5, 2.0])
    np.testing.assert_array_equal(mask.mask, [0.0, 0.0, 1.0])
    assert mask.effective_width == 1

@pytest.mark.latentops
def test_prune_mask_zero_threshold_keeps_all():
    np.testing.assert_array_equal(latentops.build_prune_mask(_variance_batch(), 0.0).mask, [1.0, 1.0, 1.0])

@pytest.mark.latentops
def test_prune_mask_ignores_invalid_frames():
    seq = LatentSequence(np.array([[0.0, 0.0], [1.0, 1.0], [9.0, 0.0]]), np.full(3, 3), np.array([1, 1, 0]), [])
    np.testing.assert_allclose(latentops.build_prune_mask([seq], 0.0).variances, [0.5, 0.5])

@pytest.mark.latentops
def test_prune_mask_without_valid_frames():
    seq = LatentSequence(np.ones((3, 2)), np.full(3, 3), np.zeros(3, dtype = int), [])
    with pytest.raises(InsufficientDataError):
        latentops.build_prune_mask([seq], 0.1)
    with pytest.raises(InsufficientDataError):
        latentops.build_prune_mask([], 0.1)

@pytest.mark.latentops
def test_apply_mask_and_report():
    z = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(latentops.apply_mask(z, PruneMask(np.array([1.0, 0.0, 1.0]), 0.5)), [[1.0, 0.0, 3.0]])
    np.testing.assert_array_equal(latentops.apply_mask(z, PruneMask.identity(3)), z)

    rows = latentops.prune_report(_variance_batch(), 1.0)
    assert [row['kept'] for row in rows] == [0, 0, 1]

@pytest.mark.latentops
def test_apply_mask_width_mismatch():
    with pytest.raises(DimensionError):
        latentops.apply_mask(np.zeros((2, 3)), np.ones(4))


# ------------------------------
#    AUGMENTATION
# ------------------------------

@pytest.mark.latentops
def test_rescale_spans_doubles():
    spans = latentops.rescale_spans([GlossSpan(4, 0, 3), GlossSpan(5, 4, 7)], 8, 16)
    assert spans == [GlossSpan(4, 0, 7), GlossSpan(5, 8, 15)]

@pytest.mark.latentops
def test_augment_keys(make_latent):
    rng = np.random.default_rng(5)
    keys = []
    for sid in range(3):
        keys.extend(latentops.augment(sid, make_latent(rng, [4, 5], 4, 6), AugmentConfig(), seed = 1))

    assert len(keys) == 30
    assert keys[:2] == ['0_0', '0_1'] and keys[-1] == '2_9'

@pytest.mark.latentops
def test_augment_disabled_fold_equals_source(make_latent):
    seq = make_latent(np.random.default_rng(6), [4, 5], 4, 6)
    cfg = AugmentConfig(folds = 1, scale_range = (1.0, 1.0), jitter_probability = 0.0, noise_variance = 0.0)
    out = latentops.augment(0, seq, cfg, seed = 1)['0_0']

    np.testing.assert_array_equal(out.z, seq.z)
    np.testing.assert_array_equal(out.m, seq.m)
    assert out.gloss_spans == seq.gloss_spans

@pytest.mark.latentops
def test_augment_is_deterministic_and_spans_stay_inside(make_latent):
    seq = make_latent(np.random.default_rng(7), [4, 5, 6], 5, 6)
    first = latentops.augment(3, seq, AugmentConfig(folds = 4), seed = 2)
    second = latentops.augment(3, seq, AugmentConfig(folds = 4), seed = 2)

    for key, fold in first.items():
        np.testing.assert_array_equal(fold.z, second[key].z)
        assert all(0 <= s.start <= s.end < fold.length for s in fold.gloss_spans)
        assert [s.gloss for s in fold.gloss_spans] == [4, 5, 6]


# ------------------------------
#    CONTAINER
# ------------------------------

@pytest.mark.latentops
def test_container_preserves_records(tmp_path):
    path = tmp_path / 'features.sxf'
    features = np.random.default_rng(8).normal(size = (5, 3)).astype(np.float32)
    latentops.container_write(path, {'0_0': Record(features, [GlossSpan(4, 0, 2), GlossSpan(5, 3, 4)]), '1_0': Record(np.ones((2, 3)))})

    container = Container(path)
    record = container.get('0_0')

    assert container.keys() == ['0_0', '1_0']
    assert len(container) == 2 and '1_0' in container
    np.testing.assert_array_equal(record.features, features)
    assert record.spans == [GlossSpan(4, 0, 2), GlossSpan(5, 3, 4)]
    assert record.to_latent().a.tolist() == [4, 4, 4, 5, 5]

@pytest.mark.latentops
def test_container_empty(tmp_path):
    path = tmp_path / 'empty.sxf'
    latentops.container_write(path, {})
    assert latentops.container_read(path) == {}

@pytest.mark.latentops
def test_container_missing_key(tmp_path):
    path = tmp_path / 'features.sxf'
    latentops.container_write(path, {'a': Record(np.zeros((1, 1)))})
    with pytest.raises(RecordNotFoundError):
        Container(path).get('b')

@pytest.mark.latentops
def test_container_duplicate_key(tmp_path):
    with pytest.raises(DuplicateKeyError):
        latentops.container_write(tmp_path / 'dup.sxf', [('a', Record(np.zeros((1, 1)))), ('a', Record(np.ones((1, 1))))])

@pytest.mark.latentops
def test_container_bad_magic(tmp_path):
    path = tmp_path / 'bad.sxf'
    path.write_bytes(b'XXXX' + bytes(6))
    with pytest.raises(ContainerFormatError):
        Container(path)

@pytest.mark.latentops
def test_container_truncated(tmp_path):
    path = tmp_path / 'features.sxf'
    latentops.container_write(path, {'a': Record(np.ones((4, 4)))})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ContainerFormatError):
        Container(path)
