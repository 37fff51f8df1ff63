from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import oracle_bleu
from simulharness import corpus_bleu, tokenize_13a

# ---------------------------------------------------------------------------
# Tokenizer: frozen fixtures (hand-derived from the documented rules)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "line, expected",
    [
        ("Hello, world!", ["Hello", ",", "world", "!"]),
        ("3.5 km", ["3.5", "km"]),                  # digit.digit stays glued
        ("1-2", ["1", "-", "2"]),                   # dash after a digit splits
        ("v2.0?", ["v2.0", "?"]),
        ('a &quot;b&quot;', ["a", '"', "b", '"']),  # XML entities first
        ("keep <skipped> none", ["keep", "none"]),
        ("A  B\tC", ["A", "B", "C"]),
        ("it's fine", ["it's", "fine"]),            # apostrophe is not split
        ("(x) [y] {z}",
         ["(", "x", ")", "[", "y", "]", "{", "z", "}"]),
        ("end.", ["end", "."]),
        ("1,000 points", ["1,000", "points"]),      # digit,digit stays glued
        ("pay 5,  now", ["pay", "5", ",", "now"]),  # digit, non-digit splits
        ("", []),
    ],
)
def test_tokenize_13a_frozen_cases(line, expected):
    assert tokenize_13a(line) == expected


@given(st.text(alphabet="abcz .,!?()0123456789-'\"&<>\n\t", max_size=40))
def test_tokenize_13a_yields_whitespace_free_tokens(line):
    tokens = tokenize_13a(line)
    assert all(tok and not tok.isspace() for tok in tokens)
    assert all(" " not in tok and "\t" not in tok for tok in tokens)


# ---------------------------------------------------------------------------
# Corpus score: hand-derived fixture arithmetic
# ---------------------------------------------------------------------------


def test_bleu_hand_fixture_short_hypothesis():
    """4-word hypothesis against a 6-word reference, worked by hand.

    p1 = 4/4, p2 = 2/3, p3 = 1/2, p4 smoothed to 100/(2*1); one word pair
    short of the reference twice over, so BP = exp(1 - 6/4).
    """
    hyp = [["the", "cat", "sat", "mat"]]
    ref = [["the", "cat", "sat", "on", "the", "mat"]]
    expected = math.exp(1 - 6 / 4) * math.exp(
        (math.log(100.0) + math.log(200.0 / 3.0)
         + math.log(50.0) + math.log(50.0)) / 4
    )
    score = corpus_bleu(hyp, ref)
    assert score == pytest.approx(expected, abs=1e-9)
    assert score == pytest.approx(38.75385825373298, abs=1e-9)
    assert oracle_bleu(hyp, ref) == pytest.approx(expected, abs=1e-9)


def test_bleu_hand_fixture_smoothing_without_brevity():
    """Equal lengths isolate the smoothing rule: only p4 hits zero."""
    hyp = [["a", "b", "c", "d"]]
    ref = [["a", "b", "c", "x"]]
    expected = math.exp(
        (math.log(75.0) + math.log(200.0 / 3.0)
         + math.log(50.0) + math.log(50.0)) / 4
    )
    assert corpus_bleu(hyp, ref) == pytest.approx(expected, abs=1e-9)
    assert oracle_bleu(hyp, ref) == pytest.approx(expected, abs=1e-9)


def test_bleu_two_sentence_corpus_frozen_value():
    hyp = [
        ["the", "quick", "brown", "fox", "jumps"],
        ["over", "the", "lazy", "dog", "today"],
    ]
    ref = [
        ["the", "quick", "brown", "fox", "jumped"],
        ["over", "the", "lazy", "dog", "now"],
    ]
    assert corpus_bleu(hyp, ref) == pytest.approx(
        66.87403049764218, abs=1e-9
    )
    assert oracle_bleu(hyp, ref) == pytest.approx(
        66.87403049764218, abs=1e-9
    )


def test_bleu_identity_and_empty():
    assert corpus_bleu(
        [["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "e"]]
    ) == pytest.approx(100.0, abs=1e-6)
    assert corpus_bleu([[]], [["a", "b"]]) == 0.0


def test_bleu_counts_accumulate_over_the_corpus():
    """Doubling a corpus (with non-zero counts at all orders) changes
    nothing: clipped counts and totals scale together."""
    hyp = [
        ["the", "quick", "brown", "fox", "jumps"],
        ["over", "the", "lazy", "dog", "today"],
    ]
    ref = [
        ["the", "quick", "brown", "fox", "jumped"],
        ["over", "the", "lazy", "dog", "now"],
    ]
    single = corpus_bleu(hyp, ref)
    doubled = corpus_bleu(hyp * 2, ref * 2)
    assert doubled == pytest.approx(single, abs=1e-9)


def test_bleu_validates_inputs():
    with pytest.raises(ValueError, match="hypotheses"):
        corpus_bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError, match="empty corpus"):
        corpus_bleu([], [])


# ---------------------------------------------------------------------------
# Dual route: package score vs brute-force oracle
# ---------------------------------------------------------------------------

_sentence = st.lists(
    st.sampled_from("ab cd ef gh ij kl mn op".split()), min_size=0, max_size=8
)
_corpus = st.lists(st.tuples(_sentence, _sentence), min_size=1, max_size=5)


@given(corpus=_corpus)
def test_bleu_matches_brute_force_oracle(corpus):
    hyps = [list(h) for h, _ in corpus]
    refs = [list(r) for _, r in corpus]
    package = corpus_bleu(hyps, refs)
    oracle = oracle_bleu(hyps, refs)
    assert package == pytest.approx(oracle, abs=1e-9)
    assert 0.0 <= package <= 100.0 + 1e-9


@given(
    sentences=st.lists(
        st.lists(
            st.sampled_from("ab cd ef gh ij kl mn op".split()),
            min_size=4,  # shorter corpora have no 4-grams and score 0
            max_size=8,
        ),
        min_size=1,
        max_size=4,
    )
)
def test_bleu_identity_corpus_is_100(sentences):
    assert corpus_bleu(sentences, sentences) == pytest.approx(
        100.0, abs=1e-6
    )


def test_bleu_identity_shorter_than_the_ngram_order_scores_zero():
    """With no 4-grams anywhere the final order never accumulates a total;
    its floored log zeroes the geometric mean (matching the reference
    scorer's behavior on degenerate corpora)."""
    for words in (["ab"], ["ab", "cd"], ["ab", "cd", "ef"]):
        assert corpus_bleu([words], [words]) == 0.0
