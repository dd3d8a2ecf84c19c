import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrag.errors import DomainError, LengthMismatch, RangeError
from kgrag.scoring import (
    ProbabilityDistribution, SoftmaxParams, TrajectoryScore, compare, proximity_score,
    softmax_slice, trajectory_score,
)
from oracles import brute_proximity, direct_softmax

logits = st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=8)


def test_hand_derived_softmax():
    # e^0 : e^ln2 = 1 : 2
    d = softmax_slice([0.0, math.log(2)], SoftmaxParams(0, 2))
    assert d.probs == pytest.approx((1 / 3, 2 / 3), abs=1e-15)


def test_slice_ignores_outside_values():
    d = softmax_slice([99.0, 1.0, 1.0, -99.0], SoftmaxParams(1, 3))
    assert d.probs == (0.5, 0.5)


def test_huge_logits_do_not_overflow():
    d = softmax_slice([1000.0, 1000.0, 0.0], SoftmaxParams(0, 3))
    assert d.probs[:2] == (0.5, 0.5) and d.probs[2] == 0.0


@pytest.mark.parametrize("p,exc", [
    (SoftmaxParams(0, 2, 0.0), DomainError),
    (SoftmaxParams(0, 2, -1.0), DomainError),
    (SoftmaxParams(1, 1), RangeError),
    (SoftmaxParams(0, 4), RangeError),
    (SoftmaxParams(-1, 2), RangeError),
])
def test_softmax_rejects_bad_params(p, exc):
    with pytest.raises(exc):
        softmax_slice([0.0, 1.0, 2.0], p)


@settings(max_examples=200, deadline=None)
@given(logits, st.floats(0.05, 5.0), st.floats(-50, 50))
def test_softmax_matches_oracle_and_is_shift_invariant(x, temp, c):
    p = SoftmaxParams(0, len(x), temp)
    got = softmax_slice(x, p).probs
    # the unstabilised oracle is only safe for moderate exponents
    if max(abs(v) for v in x) / temp < 600:
        for a, b in zip(got, direct_softmax(x, 0, len(x), temp)):
            assert abs(a - b) <= 1e-9
    assert abs(math.fsum(got) - 1.0) <= 1e-9
    shifted = softmax_slice([v + c for v in x], p).probs
    for a, b in zip(got, shifted):
        assert abs(a - b) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0.2, 1.0), st.floats(1.1, 4.0))
def test_lower_temperature_sharpens_the_peak(x, lo, hi):
    top = max(softmax_slice(x, SoftmaxParams(0, len(x), hi)).probs)
    sharp = max(softmax_slice(x, SoftmaxParams(0, len(x), lo)).probs)
    assert sharp >= top - 1e-12


def test_hand_derived_proximity():
    # ascending mass: ranked = [2, 1, 0] = ideal
    assert proximity_score(ProbabilityDistribution((0.2, 0.3, 0.5))) == 0
    # descending mass: ranked = [0, 1, 2]; (2-0)^2 + 0 + (0-2)^2 = 8
    assert proximity_score(ProbabilityDistribution((0.5, 0.3, 0.2))) == -8
    # single bin
    assert proximity_score(ProbabilityDistribution((1.0,))) == 0


@pytest.mark.parametrize("n", [3, 4, 5])
def test_proximity_over_all_permutations(n):
    base = [float(2 ** i) for i in range(n, 0, -1)]
    total = sum(base)
    seen_zero = 0
    for perm in itertools.permutations(base):
        pdf = [v / total for v in perm]
        dist = ProbabilityDistribution(tuple(pdf))
        s = proximity_score(dist)
        assert s == brute_proximity(pdf)
        assert s <= 0
        ascending = all(pdf[i] < pdf[i + 1] for i in range(n - 1))
        assert (s == 0) == ascending
        seen_zero += s == 0
    assert seen_zero == 1


def test_proximity_ties_use_index_order():
    # equal mass everywhere: ranked = [0, 1, 2, 3]
    d = ProbabilityDistribution((0.25,) * 4)
    assert proximity_score(d) == -(9 + 1 + 1 + 9)


def test_trajectory_score_hand_example():
    s = trajectory_score([0.0, 0.0, 10.0], m=2)
    assert s.progress_count == 2
    # tied bins keep index order: ranked = [2, 0, 1] against ideal [2, 1, 0]
    assert s.proximity == -2
    assert s.progress_prob == pytest.approx(1 / (1 + 2 * math.exp(-10)), abs=1e-15)


def test_trajectory_score_tie_prefers_lower_count():
    s = trajectory_score([3.0, 3.0, 0.0], m=2)
    assert s.progress_count == 0


def test_trajectory_score_length_mismatch():
    with pytest.raises(LengthMismatch):
        trajectory_score([0.0, 1.0], m=2)


def test_score_round_trip():
    s = trajectory_score([0.5, 1.5, -1.0, 2.0], m=3)
    assert TrajectoryScore.from_dict(s.to_dict()) == s


def _triple(logit_row, length, pid):
    return trajectory_score(logit_row, m=len(logit_row) - 1), length, pid


def test_compare_priority_order():
    high = _triple([0, 0, 5], 3, "b")
    low = _triple([0, 5, 0], 1, "a")
    assert compare(high, low) == -1 and compare(low, high) == 1
    # same score: shorter wins, then path id
    assert compare(_triple([0, 0, 5], 2, "z"), _triple([0, 0, 5], 3, "a")) == -1
    assert compare(_triple([0, 0, 5], 2, "a"), _triple([0, 0, 5], 2, "b")) == -1
    assert compare(high, high) == 0


def test_compare_peak_probability_before_proximity():
    # same count; the sharper peak wins even though its proximity is worse
    sharp = _triple([2.0, 0.0, 9.0], 1, "a")
    soft = _triple([0.0, 1.0, 2.0], 1, "b")
    assert sharp[0].progress_prob > soft[0].progress_prob
    assert sharp[0].proximity < soft[0].proximity
    assert compare(sharp, soft) == -1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(-3, 3), min_size=3, max_size=3),
                          st.integers(1, 4), st.sampled_from("abcd")), min_size=3, max_size=3))
def test_compare_is_a_total_order(rows):
    a, b, c = (_triple([float(v) for v in r], n, p) for r, n, p in rows)
    assert compare(a, b) == -compare(b, a)
    if compare(a, b) <= 0 and compare(b, c) <= 0:
        assert compare(a, c) <= 0


def test_equal_scores_prefer_the_shorter_path():
    assert compare(_triple([0, 0, 5], 3, "b"), _triple([0, 0, 5], 5, "a")) == -1
