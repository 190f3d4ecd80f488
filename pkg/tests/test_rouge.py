import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from plansum.rouge import mean_f1, mean_r1_r2, rouge_l, rouge_n, rouge_score

from oracles import naive_rouge_l, naive_rouge_n

WORDS = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran"]


class TestRougeN:
    def test_hand_example(self):
        score = rouge_n(["the", "cat"], ["the", "cat", "sat"], 1)
        assert score.precision == 1.0
        assert score.recall == pytest.approx(2 / 3)
        assert score.f1 == pytest.approx(0.8)

    def test_identical(self):
        assert rouge_n(["a", "b", "c"], ["a", "b", "c"], 1).f1 == 1.0
        assert rouge_n(["a", "b", "c"], ["a", "b", "c"], 2).f1 == 1.0

    def test_disjoint(self):
        assert rouge_n(["a", "b"], ["c", "d"], 1).f1 == 0.0

    def test_zero_counts_no_error(self):
        assert rouge_n([], ["a"], 1) == (0.0, 0.0, 0.0)
        assert rouge_n(["a"], ["a"], 2) == (0.0, 0.0, 0.0)

    def test_clipping(self):
        # "a" appears once in the reference; candidate repeats it
        score = rouge_n(["a", "a", "a"], ["a", "b"], 1)
        assert score.precision == pytest.approx(1 / 3)
        assert score.recall == pytest.approx(1 / 2)

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            rouge_n(["a"], ["a"], 0)


class TestRougeL:
    def test_hand_example(self):
        score = rouge_l(["a", "b", "c"], ["a", "c"])
        assert score.precision == pytest.approx(2 / 3)
        assert score.recall == 1.0

    def test_empty_candidate(self):
        assert rouge_l([], ["a", "b"]) == (0.0, 0.0, 0.0)

    def test_identical(self):
        assert rouge_l(["x", "y"], ["x", "y"]).f1 == 1.0


class TestMeanR1R2:
    def test_identical(self):
        assert mean_r1_r2(["a", "b"], ["a", "b"]) == 1.0

    def test_hand_example(self):
        value = mean_r1_r2(["the", "cat"], ["the", "cat", "sat"])
        assert value == pytest.approx((0.8 + 2 * (1 * 0.5) / 1.5) / 2)

    def test_disjoint(self):
        assert mean_r1_r2(["a"], ["b"]) == 0.0


def test_agreement_with_naive_implementations():
    rng = random.Random(42)
    for _ in range(200):
        cand = [rng.choice(WORDS) for _ in range(rng.randint(0, 12))]
        ref = [rng.choice(WORDS) for _ in range(rng.randint(0, 12))]
        for n in (1, 2, 3):
            ours = rouge_n(cand, ref, n)
            theirs = naive_rouge_n(cand, ref, n)
            for a, b in zip(ours, theirs):
                assert abs(a - b) <= 1e-12
        ours = rouge_l(cand, ref)
        theirs = naive_rouge_l(cand, ref)
        for a, b in zip(ours, theirs):
            assert abs(a - b) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=10),
       st.integers(min_value=1, max_value=3))
def test_self_f1_is_one(tokens, n):
    if n <= len(tokens):
        assert rouge_n(tokens, tokens, n).f1 == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8),
       st.lists(st.sampled_from(WORDS), min_size=1, max_size=8))
def test_appending_reference_token_never_decreases_recall(cand, ref):
    before = rouge_n(cand, ref, 1).recall
    after = rouge_n(cand + [ref[0]], ref, 1).recall
    assert after >= before - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(WORDS[:4]), max_size=8),
       st.lists(st.sampled_from(WORDS[:4]), max_size=8))
def test_lcs_matches_brute_force(a, b):
    ours = rouge_l(a, b)
    theirs = naive_rouge_l(a, b)
    assert ours.f1 == pytest.approx(theirs[2], abs=1e-12)


def test_mean_f1_averages_three_variants():
    score = rouge_score(["a", "b"], ["a", "c"])
    expected = (score.r1.f1 + score.r2.f1 + score.rl.f1) / 3
    assert mean_f1(["a", "b"], ["a", "c"]) == pytest.approx(expected)
