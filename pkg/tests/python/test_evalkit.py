"""
Unit tests for evalkit: word error rate, BLEU, per-instance accuracy and the CSV report.
"""

import itertools
import math
import os
import sys

import pandas as pd
import pytest

# Add the shared/python directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'shared', 'python'))

import evalkit
from sxtypes import UndefinedMetricError


# ------------------------------
#    HELPERS
# ------------------------------

def _levenshtein(a: str, b: str) -> int:
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        current = [i]
        for j, y in enumerate(b, 1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


# ------------------------------
#    WORD ERROR RATE
# ------------------------------

@pytest.mark.evalkit
@pytest.mark.parametrize('hypothesis,reference,expected', [
    ('A B X D', 'A B C D', (0.25, 1, 0, 0)),
    ('', 'A B', (1.0, 0, 2, 0)),
    ('A B C', 'A B C', (0.0, 0, 0, 0)),
    ('A B C', 'A C', (0.5, 0, 0, 1)),
])
def test_wer_examples(hypothesis, reference, expected):
    assert evalkit.wer(hypothesis, reference) == expected

@pytest.mark.evalkit
def test_wer_prefers_substitution():
    assert evalkit.wer(['X'], ['Y']) == (1.0, 1, 0, 0)

@pytest.mark.evalkit
def test_wer_empty_reference():
    with pytest.raises(UndefinedMetricError):
        evalkit.wer('A', '')

@pytest.mark.evalkit
def test_edit_counts_match_exhaustive_levenshtein():
    words = [''.join(p) for n in range(4) for p in itertools.product('abc', repeat = n)]

    for hyp, ref in itertools.product(words, words[1:]):
        counts = evalkit.edit_counts(list(hyp), list(ref))
        assert counts.errors == _levenshtein(ref, hyp)

@pytest.mark.evalkit
def test_corpus_wer_pools_counts():
    report = evalkit.corpus_wer([(['A'], ['A', 'B']), (['C', 'D'], ['C', 'D'])])

    assert report.wer == pytest.approx(0.25)
    assert (report.counts.deletions, report.counts.reference_length) == (1, 4)


# ------------------------------
#    BLEU
# ------------------------------

@pytest.mark.evalkit
def test_bleu_clipped_unigrams():
    assert evalkit.sentence_bleu('A A A', 'A B', max_n = 1)[1] == pytest.approx(1.0 / 3.0)

@pytest.mark.evalkit
def test_bleu_identical_is_one():
    scores = evalkit.bleu(['A B C D E'], ['A B C D E'])
    assert scores == {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}

@pytest.mark.evalkit
def test_bleu_brevity_penalty():
    assert evalkit.sentence_bleu('A', 'A B', max_n = 1)[1] == pytest.approx(math.exp(-1.0))

@pytest.mark.evalkit
def test_bleu_zero_precision_zeroes_higher_orders():
    scores = evalkit.sentence_bleu('A B', 'B A')
    assert scores[1] == pytest.approx(1.0)
    assert scores[2] == scores[3] == scores[4] == 0.0

@pytest.mark.evalkit
def test_bleu_empty_hypothesis_and_corpus():
    assert evalkit.sentence_bleu('', 'A B')[1] == 0.0
    with pytest.raises(UndefinedMetricError):
        evalkit.bleu([], [])


# ------------------------------
#    ACCURACY AND REPORTS
# ------------------------------

@pytest.mark.evalkit
@pytest.mark.parametrize('predicted,expected', [
    (['a', 'b', 'c', 'x'], 0.75),
    (['a', 'b', 'c', 'd'], 1.0),
    (['w', 'x', 'y', 'z'], 0.0),
])
def test_pi_accuracy(predicted, expected):
    assert evalkit.pi_accuracy(predicted, ['a', 'b', 'c', 'd']) == expected

@pytest.mark.evalkit
def test_pi_accuracy_undefined():
    with pytest.raises(UndefinedMetricError):
        evalkit.pi_accuracy([], [])

@pytest.mark.evalkit
def test_evaluate_and_write_report(tmp_path):
    report = evalkit.evaluate([[4, 5], [6]], [[4, 5], [7]])

    assert report.wer == pytest.approx(1.0 / 3.0)
    assert report.pi_accuracy == 0.5

    path = tmp_path / 'report.csv'
    evalkit.write_report(path, [report.row('test')])
    df = pd.read_csv(path)

    assert list(df.columns) == evalkit.REPORT_COLUMNS
    assert df.loc[0, 'split'] == 'test'
    assert df.loc[0, 'N'] == 3
