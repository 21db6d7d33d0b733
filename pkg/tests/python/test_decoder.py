"""
Unit tests for decoding: attention entropy, entropy-penalized beam search and CTC greedy decoding.
"""

import itertools
import json
import math
import os
import sys

import numpy as np
import pytest

# Add the shared/python directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'shared', 'python'))

import decoder
from decoder import DecodeConfig, DecodeResult
from posespace import Codebook
from sxtypes import EmptyInputError, ParameterError, Token


# ------------------------------
#    TOY STEP MODELS
# ------------------------------

VOCAB   = 7   # reserved 0..3, glosses 4..6
ALLOWED = 4   # EOS and the three glosses
GLOSSES = [4, 5, 6]


class SeededStepModel:
    """Logits and cross-attention drawn from a generator seeded by the model seed and the prefix."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def decoder_step(self, prefix, H):
        rng = np.random.default_rng([self.seed] + [int(t) for t in prefix])
        logits = rng.normal(size = VOCAB) * 2.0
        scores = rng.normal(size = (2, 5))
        weights = np.exp(scores) / np.exp(scores).sum(axis = -1, keepdims = True)
        return logits, weights


class TwoPathStepModel:
    """
    After BOS, gloss 4 leads gloss 5 by 0.05 in log-probability; the EOS step after 4 attends
    uniformly over three frames while the EOS step after 5 attends to a single frame.
    """

    def decoder_step(self, prefix, H):
        logits = np.full(VOCAB, -20.0)

        if len(prefix) == 1:
            logits[4], logits[5] = 0.05, 0.0
            return logits, np.array([[1.0, 0.0, 0.0]])

        logits[Token.EOS] = 10.0
        weights = np.full((1, 3), 1.0 / 3.0) if prefix[-1] == 4 else np.array([[0.0, 1.0, 0.0]])
        return logits, weights


class ImmediateEosStepModel:
    def decoder_step(self, prefix, H):
        logits = np.full(VOCAB, -5.0)
        logits[Token.EOS] = 5.0
        return logits, np.array([[0.5, 0.5]])


class NoEosStepModel(SeededStepModel):
    def decoder_step(self, prefix, H):
        logits, weights = super().decoder_step(prefix, H)
        logits[Token.EOS] = -np.inf
        return logits, weights


class LateEosStepModel:
    """
    Gloss 4 is the likeliest token at every step; any other gloss is almost always followed by EOS.
    """

    def decoder_step(self, prefix, H):
        logits = np.full(VOCAB, -3.0)

        if prefix[-1] in (Token.BOS, 4):
            logits[4], logits[Token.EOS] = 0.0, -1.0
        else:
            logits[Token.EOS] = 0.0

        return logits, np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])


H = np.zeros((5, 4))


def _log_softmax_allowed(logits: np.ndarray) -> np.ndarray:
    logits = np.array(logits, dtype = np.float64)
    logits[[Token.BLANK, Token.BOS, Token.PAD]] = -np.inf
    finite = logits[np.isfinite(logits)]
    return logits - (finite.max() + math.log(np.exp(finite - finite.max()).sum()))

def _sequence_score(model, tokens: list[int], alpha: float) -> float:
    score = 0.0
    for k in range(1, len(tokens)):
        logits, weights = model.decoder_step(tokens[:k], H)
        score += _log_softmax_allowed(logits)[tokens[k]] - alpha * decoder.attention_entropy(weights)
    return score

def _exhaustive_best(model, alpha: float, max_length: int) -> float:
    """Best score over every sequence ending in EOS within max_length steps, or cut off at max_length."""
    best = -math.inf
    bos, eos = int(Token.BOS), int(Token.EOS)

    for length in range(1, max_length + 1):
        for body in itertools.product(GLOSSES, repeat = length - 1):
            best = max(best, _sequence_score(model, [bos] + list(body) + [eos], alpha))

    for body in itertools.product(GLOSSES, repeat = max_length):
        best = max(best, _sequence_score(model, [bos] + list(body), alpha))

    return best


# ------------------------------
#    ATTENTION ENTROPY
# ------------------------------

@pytest.mark.decoder
def test_attention_entropy_one_hot_is_zero():
    assert decoder.attention_entropy(np.array([[0.0, 1.0, 0.0]])) == 0.0

@pytest.mark.decoder
def test_attention_entropy_uniform_is_log_length():
    assert decoder.attention_entropy(np.full((3, 4), 0.25)) == pytest.approx(math.log(4))

@pytest.mark.decoder
def test_attention_entropy_averages_heads():
    assert decoder.attention_entropy(np.array([[1.0, 0.0], [0.5, 0.5]])) == pytest.approx(math.log(2) / 2)

@pytest.mark.decoder
def test_attn_entropy_uses_last_step():
    assert decoder.attn_entropy([Token.BOS, 4], H, TwoPathStepModel()) == pytest.approx(math.log(3))


# ------------------------------
#    BEAM SEARCH
# ------------------------------

@pytest.mark.decoder
def test_beam_of_one_is_greedy():
    model = SeededStepModel()
    cfg = DecodeConfig(beam_size = 1, top_k = 1, max_length = 6, entropy_penalty = 0.0)

    tokens, score = [int(Token.BOS)], 0.0
    for _ in range(cfg.max_length):
        log_probs = _log_softmax_allowed(model.decoder_step(tokens, H)[0])
        token = int(np.argmax(log_probs))
        tokens.append(token)
        score += log_probs[token]
        if token == Token.EOS:
            break

    result = decoder.beam_decode(H, cfg, model)
    assert result.glosses == [t for t in tokens if t not in (Token.BOS, Token.EOS)]
    assert result.score == pytest.approx(score)

@pytest.mark.decoder
@pytest.mark.parametrize('alpha', [0.0, 0.1, 1.0])
def test_wide_beam_matches_exhaustive_search(alpha):
    for seed in range(100):
        model = SeededStepModel(seed)
        cfg = DecodeConfig(beam_size = 64, top_k = 4, max_length = 4, entropy_penalty = alpha)
        assert decoder.beam_decode(H, cfg, model).score == pytest.approx(_exhaustive_best(model, alpha, 4), abs = 1e-12)

@pytest.mark.decoder
@pytest.mark.parametrize('max_length', [1, 2])
def test_vocabulary_wide_beam_matches_exhaustive_search(max_length):
    for seed in range(100):
        model = SeededStepModel(seed)
        cfg = DecodeConfig(beam_size = ALLOWED, top_k = ALLOWED, max_length = max_length, entropy_penalty = 0.0)
        assert decoder.beam_decode(H, cfg, model).score == pytest.approx(_exhaustive_best(model, 0.0, max_length), abs = 1e-12)

@pytest.mark.decoder
def test_wider_beam_never_scores_lower():
    for seed in range(100):
        model = SeededStepModel(seed)
        scores = [decoder.beam_decode(H, DecodeConfig(beam_size = b, top_k = 4, max_length = 4), model).score for b in range(1, 9)]
        assert all(wider >= narrower - 1e-12 for narrower, wider in zip(scores, scores[1:]))

@pytest.mark.decoder
def test_unfinished_hypothesis_competes_at_max_length():
    narrow = decoder.beam_decode(H, DecodeConfig(beam_size = 1, top_k = 4, max_length = 2, entropy_penalty = 0.0), LateEosStepModel())
    wide = decoder.beam_decode(H, DecodeConfig(beam_size = 4, top_k = 4, max_length = 2, entropy_penalty = 0.0), LateEosStepModel())

    assert narrow.glosses == [4, 4] and not narrow.finished
    assert wide.glosses == [4, 4]
    assert wide.score == pytest.approx(narrow.score)

@pytest.mark.decoder
def test_score_never_increases_as_tokens_are_appended():
    model = NoEosStepModel(3)
    scores = [decoder.beam_decode(H, DecodeConfig(beam_size = 1, top_k = 1, max_length = n), model).score for n in range(1, 6)]

    assert scores[0] <= 0.0
    assert all(longer <= shorter for shorter, longer in zip(scores, scores[1:]))

@pytest.mark.decoder
def test_entropy_penalty_flips_choice():
    plain = decoder.beam_decode(H, DecodeConfig(beam_size = 2, top_k = 3, max_length = 3, entropy_penalty = 0.0), TwoPathStepModel())
    penalized = decoder.beam_decode(H, DecodeConfig(beam_size = 2, top_k = 3, max_length = 3, entropy_penalty = 0.1), TwoPathStepModel())

    assert plain.glosses == [4]
    assert penalized.glosses == [5]
    assert penalized.finished and penalized.per_step_entropy == pytest.approx([0.0, 0.0])

@pytest.mark.decoder
def test_beam_empty_encoder_states():
    with pytest.raises(EmptyInputError):
        decoder.beam_decode(np.zeros((0, 4)), DecodeConfig(), SeededStepModel())

@pytest.mark.decoder
def test_beam_empty_hypothesis_is_flagged():
    result = decoder.beam_decode(H, DecodeConfig(beam_size = 2, top_k = 1), ImmediateEosStepModel())

    assert result.glosses == []
    assert result.empty and result.finished
    assert result.steps == 1

@pytest.mark.decoder
def test_beam_stops_at_max_length():
    model = SeededStepModel()
    result = decoder.beam_decode(H, DecodeConfig(beam_size = 3, top_k = 3, max_length = 2), model)
    assert result.steps <= 2
    assert len(result.glosses) <= 2

@pytest.mark.decoder
@pytest.mark.parametrize('kwargs', [
    {'beam_size': 0},
    {'top_k': 0},
    {'top_p': 0.0},
    {'repetition_penalty': 0.5},
    {'temperature': 0.0},
])
def test_decode_config_validation(kwargs):
    with pytest.raises(ParameterError):
        DecodeConfig(**kwargs).validate()

@pytest.mark.decoder
def test_top_p_keeps_only_the_nucleus():
    cfg = DecodeConfig(beam_size = 8, top_k = 7, max_length = 1, top_p = 0.5, entropy_penalty = 0.0)
    result = decoder.beam_decode(H, cfg, TwoPathStepModel())
    assert result.glosses == [4]


# ------------------------------
#    CTC DECODING
# ------------------------------

@pytest.mark.decoder
@pytest.mark.parametrize('labels,expected', [
    ([0, 4, 4, 0, 4, 5, 5, 0], [4, 4, 5]),
    ([0, 0, 0], []),
    ([], []),
    ([6, 6, 6], [6]),
])
def test_ctc_collapse(labels, expected):
    assert decoder.ctc_collapse(labels) == expected

@pytest.mark.decoder
def test_ctc_greedy_decode():
    log_probs = np.log(np.array([[0.1, 0.9, 1e-9], [0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.1, 0.1, 0.8]]))
    assert decoder.ctc_greedy_decode(log_probs) == [1, 2]

@pytest.mark.decoder
def test_ctc_greedy_decode_empty():
    with pytest.raises(EmptyInputError):
        decoder.ctc_greedy_decode(np.zeros((0, 3)))


# ------------------------------
#    OUTPUT
# ------------------------------

@pytest.mark.decoder
def test_decode_to_json():
    codebook = Codebook(['A', 'B', 'C'])
    line = decoder.decode_to_json(17, DecodeResult([4, 6], -1.25, [0.5, 0.25], True, False, 3), codebook)

    assert json.loads(line) == {'id': '17', 'glosses': ['A', 'C'], 'score': -1.25, 'per_step_entropy': [0.5, 0.25]}

@pytest.mark.decoder
def test_decode_to_json_marks_empty():
    line = decoder.decode_to_json('x', DecodeResult([], -0.1, [0.0], True, True, 1), Codebook(['A']))
    assert json.loads(line)['empty'] is True
