"""
Sequence and classification metrics: word error rate, corpus and sentence BLEU, per-instance accuracy.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import pandas as pd

from sxtypes import UndefinedMetricError


# ------------------------------
#    CONSTANTS
# ------------------------------

REPORT_COLUMNS = ['split', 'wer', 'bleu1', 'bleu2', 'bleu3', 'bleu4', 'pi', 'S', 'D', 'I', 'N']


# ------------------------------
#    CLASSES
# ------------------------------

@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: 'EditCounts') -> 'EditCounts':
        return EditCounts(self.substitutions + other.substitutions, self.deletions + other.deletions,
                          self.insertions + other.insertions, self.reference_length + other.reference_length)


@dataclass
class EvalReport:
    """
    Aggregated metrics of one split; wer = (S + D + I) / N.
    """

    wer: float
    bleu: dict[int, float] = field(default_factory = dict)
    pi_accuracy: float = float('nan')
    counts: EditCounts = field(default_factory = EditCounts)

    def row(self, split: str) -> dict:
        row = {'split': split, 'wer': self.wer, 'pi': self.pi_accuracy,
               'S': self.counts.substitutions, 'D': self.counts.deletions, 'I': self.counts.insertions, 'N': self.counts.reference_length}
        row.update({f'bleu{n}': self.bleu.get(n, float('nan')) for n in range(1, 5)})
        return row


# ------------------------------
#    WORD ERROR RATE
# ------------------------------

def tokenize(glosses: str | Sequence[Hashable]) -> list[Hashable]:
    """
    Gloss strings split on single spaces; sequences are used as given.
    """
    if isinstance(glosses, str):
        return [g for g in glosses.split(' ') if g]
    return list(glosses)

def edit_counts(hypothesis: str | Sequence[Hashable], reference: str | Sequence[Hashable]) -> EditCounts:
    """
    Levenshtein alignment with minimal S + D + I; among equal-cost alignments substitutions are preferred
    over delete/insert pairs.
    """
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    n, m = len(ref), len(hyp)

    # cost[i][j] = (edits, insert+delete count) for ref[:i] vs hyp[:j]
    cost = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    move = [[''] * (m + 1) for _ in range(n + 1)]

    for i in range(1, n + 1):
        cost[i][0], move[i][0] = (i, i), 'D'
    for j in range(1, m + 1):
        cost[0][j], move[0][j] = (j, j), 'I'

    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                options = [(cost[i - 1][j - 1], 'M')]
            else:
                e, g = cost[i - 1][j - 1]
                options = [((e + 1, g), 'S')]
            e, g = cost[i - 1][j]
            options.append(((e + 1, g + 1), 'D'))
            e, g = cost[i][j - 1]
            options.append(((e + 1, g + 1), 'I'))
            cost[i][j], move[i][j] = min(options, key = lambda option: option[0])

    counts = EditCounts(reference_length = n)
    i, j = n, m

    while i > 0 or j > 0:
        step = move[i][j]
        if step in ('M', 'S'):
            counts.substitutions += step == 'S'
            i, j = i - 1, j - 1
        elif step == 'D':
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1

    return counts

def wer(hypothesis: str | Sequence[Hashable], reference: str | Sequence[Hashable]) -> tuple[float, int, int, int]:
    """
    Word error rate of one hypothesis against its reference.

    Returns:
        tuple: (wer, S, D, I).
    """
    counts = edit_counts(hypothesis, reference)

    if counts.reference_length == 0:
        raise UndefinedMetricError('WER is undefined for an empty reference')

    return counts.errors / counts.reference_length, counts.substitutions, counts.deletions, counts.insertions

def corpus_wer(pairs: Iterable[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> EvalReport:
    """
    Aggregate edit counts over (hypothesis, reference) pairs; wer = sum(S + D + I) / sum(N).
    """
    total = EditCounts()

    for hypothesis, reference in pairs:
        total = total + edit_counts(hypothesis, reference)

    if total.reference_length == 0:
        raise UndefinedMetricError('WER is undefined for an empty reference corpus')

    return EvalReport(total.errors / total.reference_length, counts = total)


# ------------------------------
#    BLEU
# ------------------------------

def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))

def _clipped_counts(hyp: Sequence[Hashable], ref: Sequence[Hashable], n: int) -> tuple[int, int]:
    candidate = _ngrams(hyp, n)
    reference = _ngrams(ref, n)
    return sum(min(c, reference[g]) for g, c in candidate.items()), sum(candidate.values())

def _bleu_from_counts(matches: list[int], totals: list[int], c: int, r: int, max_n: int) -> dict[int, float]:
    if c == 0:
        return {n: 0.0 for n in range(1, max_n + 1)}

    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    scores = {}
    log_sum = 0.0

    for n in range(1, max_n + 1):
        if totals[n - 1] == 0 or matches[n - 1] == 0:
            # zero precision at this order zeroes it and every higher order
            for k in range(n, max_n + 1):
                scores[k] = 0.0
            break
        log_sum += math.log(matches[n - 1] / totals[n - 1])
        scores[n] = bp * math.exp(log_sum / n)

    return scores

def bleu(hypotheses: Sequence[str | Sequence[Hashable]], references: Sequence[str | Sequence[Hashable]], max_n: int = 4) -> dict[int, float]:
    """
    Corpus BLEU-n for n = 1..max_n with uniform weights, clipped n-gram counts and a brevity penalty.

    Args:
        hypotheses: Candidate gloss sequences.
        references: One reference per candidate.
        max_n (int): Highest n-gram order.

    Returns:
        dict[int, float]: BLEU per order in [0, 1]; an order with zero precision scores 0.
    """

    if not hypotheses:
        raise UndefinedMetricError('BLEU is undefined for an empty corpus')
    if len(hypotheses) != len(references):
        raise UndefinedMetricError(f'{len(hypotheses)} hypotheses but {len(references)} references')

    matches, totals = [0] * max_n, [0] * max_n
    c = r = 0

    for hypothesis, reference in zip(hypotheses, references):
        hyp, ref = tokenize(hypothesis), tokenize(reference)
        c += len(hyp)
        r += len(ref)
        for n in range(1, max_n + 1):
            matched, total = _clipped_counts(hyp, ref, n)
            matches[n - 1] += matched
            totals[n - 1] += total

    return _bleu_from_counts(matches, totals, c, r, max_n)

def sentence_bleu(hypothesis: str | Sequence[Hashable], reference: str | Sequence[Hashable], max_n: int = 4) -> dict[int, float]:
    return bleu([hypothesis], [reference], max_n)


# ------------------------------
#    CLASSIFICATION
# ------------------------------

def pi_accuracy(predicted: Sequence[Hashable], true: Sequence[Hashable]) -> float:
    """
    Per-instance (micro-averaged) top-1 accuracy.
    """
    if len(predicted) == 0:
        raise UndefinedMetricError('accuracy is undefined for an empty sample set')
    if len(predicted) != len(true):
        raise UndefinedMetricError(f'{len(predicted)} predictions but {len(true)} labels')

    return sum(1 for p, t in zip(predicted, true) if p == t) / len(true)


# ------------------------------
#    REPORTS
# ------------------------------

def evaluate(hypotheses: Sequence[Sequence[Hashable]], references: Sequence[Sequence[Hashable]]) -> EvalReport:
    """
    Corpus WER, BLEU-1..4 and sequence-level exact-match accuracy.
    """
    report = corpus_wer(zip(hypotheses, references))
    report.bleu = bleu(hypotheses, references, 4)
    report.pi_accuracy = pi_accuracy([tuple(tokenize(h)) for h in hypotheses], [tuple(tokenize(r)) for r in references])
    return report

def write_report(path: str | Path, rows: Sequence[dict]) -> pd.DataFrame:
    df = pd.DataFrame(list(rows), columns = REPORT_COLUMNS)
    df.to_csv(path, index = False, float_format = '%.6f')
    return df
