"""
Inference: beam search over decoder steps with an attention-entropy penalty, and CTC collapse / greedy decoding.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from sxtypes import FIRST_GLOSS_INDEX, EmptyInputError, ParameterError, Token


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class DecodeConfig:
    """
    Beam search settings. top_p, repetition_penalty, length_penalty and temperature are
    off by default (None / 1.0 / 0.0 / 1.0).
    """

    beam_size: int = 8
    entropy_penalty: float = 0.1
    top_k: int = 50
    max_length: int = 12
    top_p: float | None = None
    repetition_penalty: float = 1.0
    length_penalty: float = 0.0
    temperature: float = 1.0

    def validate(self) -> None:
        if min(self.beam_size, self.top_k, self.max_length) < 1:
            raise ParameterError(f'beam_size, top_k and max_length must be at least 1, got {self.beam_size}, {self.top_k}, {self.max_length}')
        if self.top_p is not None and not 0.0 < self.top_p <= 1.0:
            raise ParameterError(f'top_p must be in (0, 1], got {self.top_p}')
        if self.repetition_penalty < 1.0:
            raise ParameterError(f'repetition_penalty must be >= 1, got {self.repetition_penalty}')
        if self.length_penalty < 0 or self.temperature <= 0:
            raise ParameterError('length_penalty must be >= 0 and temperature > 0')
        if self.entropy_penalty < 0:
            raise ParameterError(f'entropy_penalty must be non-negative, got {self.entropy_penalty}')


class StepModel(Protocol):
    def decoder_step(self, prefix: Sequence[int], H) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class BeamHypothesis:
    tokens: list[int]
    score: float = 0.0
    finished: bool = False
    entropies: list[float] = field(default_factory = list)

    @property
    def glosses(self) -> list[int]:
        return [t for t in self.tokens if t not in (Token.BOS, Token.EOS)]


@dataclass
class DecodeResult:
    glosses: list[int]
    score: float
    per_step_entropy: list[float]
    finished: bool
    empty: bool
    steps: int


# ------------------------------
#    ATTENTION ENTROPY
# ------------------------------

def attention_entropy(weights: np.ndarray) -> float:
    """
    Shannon entropy in nats of attention distributions over the last axis, averaged over heads.
    """
    w = np.asarray(weights, dtype = np.float64)
    w = w.reshape(-1, w.shape[-1])
    terms = np.where(w > 0, -w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    return float(terms.sum(axis = -1).mean())

def attn_entropy(prefix: Sequence[int], H, model: StepModel) -> float:
    """
    Entropy of the last decoder step's cross-attention for `prefix`.
    """
    _, weights = model.decoder_step(prefix, H)
    return attention_entropy(weights)


# ------------------------------
#    BEAM SEARCH
# ------------------------------

def _step_log_probs(logits: np.ndarray, tokens: Sequence[int], cfg: DecodeConfig) -> np.ndarray:
    logits = np.array(logits, dtype = np.float64)
    logits[[Token.BLANK, Token.BOS, Token.PAD]] = -np.inf

    if cfg.repetition_penalty > 1.0:
        seen = sorted({t for t in tokens if t >= FIRST_GLOSS_INDEX})
        seen = [t for t in seen if np.isfinite(logits[t])]
        logits[seen] = np.where(logits[seen] > 0, logits[seen] / cfg.repetition_penalty, logits[seen] * cfg.repetition_penalty)

    logits = logits / cfg.temperature
    finite = np.isfinite(logits)
    peak = logits[finite].max()
    log_norm = peak + math.log(np.exp(logits[finite] - peak).sum())
    return logits - log_norm

def _candidates(log_probs: np.ndarray, cfg: DecodeConfig) -> list[int]:
    finite = np.flatnonzero(np.isfinite(log_probs))
    ranked = finite[np.argsort(-log_probs[finite], kind = 'stable')][:cfg.top_k]

    if cfg.top_p is not None:
        mass = np.cumsum(np.exp(log_probs[ranked]))
        cutoff = int(np.searchsorted(mass, cfg.top_p - 1e-12)) + 1
        ranked = ranked[:cutoff]

    return [int(t) for t in ranked]

def _final_score(hyp: BeamHypothesis, cfg: DecodeConfig) -> float:
    if cfg.length_penalty > 0:
        return hyp.score / max(1, len(hyp.tokens) - 1) ** cfg.length_penalty
    return hyp.score

def beam_decode(H, cfg: DecodeConfig, model: StepModel) -> DecodeResult:
    """
    Beam search with score s' = s + log p(w) - alpha * H_attn, where H_attn is the cross-attention
    entropy of the step that emits w.

    Every live hypothesis is expanded over its top-k tokens; the top-B candidates survive, and those
    ending in EOS move to a finished pool. Search stops when no live hypothesis remains or after
    max_length steps.

    Args:
        H: Encoder states (T', d) passed through to the model.
        cfg (DecodeConfig): Beam size, alpha, top-k and max length.
        model: Anything exposing decoder_step(prefix, H) -> (logits, cross attention (heads, T')).

    Returns:
        DecodeResult: Best hypothesis by score among the finished pool and the live beam left at max_length,
        stripped of BOS/EOS; `empty` is set when it holds no glosses.
    """

    cfg.validate()

    if H is None or np.shape(H)[0] == 0:
        raise EmptyInputError('beam_decode needs nonempty encoder states')

    live = [BeamHypothesis([int(Token.BOS)])]
    pool: list[BeamHypothesis] = []
    steps = 0

    while live and steps < cfg.max_length:
        steps += 1
        candidates = []

        for hyp in live:
            logits, weights = model.decoder_step(hyp.tokens, H)
            entropy = attention_entropy(weights)
            log_probs = _step_log_probs(logits, hyp.tokens, cfg)

            for token in _candidates(log_probs, cfg):
                candidates.append(BeamHypothesis(hyp.tokens + [token],
                                                 hyp.score + float(log_probs[token]) - cfg.entropy_penalty * entropy,
                                                 token == Token.EOS,
                                                 hyp.entropies + [entropy]))

        candidates.sort(key = lambda h: h.score, reverse = True)
        survivors = candidates[:cfg.beam_size]
        pool.extend(h for h in survivors if h.finished)
        live = [h for h in survivors if not h.finished]

    ranked = pool + live
    best = max(ranked, key = lambda h: _final_score(h, cfg))
    glosses = best.glosses
    return DecodeResult(glosses, _final_score(best, cfg), best.entropies, best.finished, not glosses, steps)


# ------------------------------
#    CTC DECODING
# ------------------------------

def ctc_collapse(labels: Sequence[int]) -> list[int]:
    """
    Merge consecutive repeats, then delete BLANKs.
    """
    out = []
    previous = None

    for label in labels:
        label = int(label)
        if label != previous and label != Token.BLANK:
            out.append(label)
        previous = label

    return out

def ctc_greedy_decode(log_probs: np.ndarray) -> list[int]:
    log_probs = np.asarray(log_probs)

    if log_probs.ndim != 2 or log_probs.shape[0] < 1:
        raise EmptyInputError(f'greedy CTC decoding needs (T, V) log-probabilities with T >= 1, got {log_probs.shape}')

    return ctc_collapse(np.argmax(log_probs, axis = -1))


# ------------------------------
#    OUTPUT
# ------------------------------

def decode_to_json(utterance_id: str | int, result: DecodeResult, codebook) -> str:
    """
    One decode line: {id, glosses, score, per_step_entropy}.
    """
    record = {
        'id': str(utterance_id),
        'glosses': codebook.decode(result.glosses),
        'score': result.score,
        'per_step_entropy': [round(e, 10) for e in result.per_step_entropy],
    }

    if result.empty:
        record['empty'] = True

    return json.dumps(record, sort_keys = True)
