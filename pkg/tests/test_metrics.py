import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflectrl.metrics import (
    UndefinedTau,
    aggregate_metrics,
    exact_match,
    f1,
    iou_kendall_reward,
    kendall_tau,
    normalize_answer,
)


# -- oracles ----------------------------------------------------------------

def tau_by_pairs(a, b):
    """O(n^2) concordant-minus-discordant count."""
    pos = {x: i for i, x in enumerate(b)}
    n, s = len(a), 0
    for i in range(n):
        for j in range(i + 1, n):
            s += 1 if pos[a[i]] < pos[a[j]] else -1
    return s / (n * (n - 1) / 2)


def f1_by_removal(pred, gold):
    """Token F1 by matching tokens one at a time against a shrinking copy of gold."""
    pred, gold = list(pred), list(gold)
    if not pred and not gold:
        return 1.0
    pool, same = gold.copy(), 0
    for t in pred:
        if t in pool:
            pool.remove(t)
            same += 1
    if same == 0:
        return 0.0
    p, r = same / len(pred), same / len(gold)
    return 2 * p * r / (p + r)


def em_by_sorting(pred, gold):
    return int(sorted(pred) == sorted(gold))


# -- kendall ----------------------------------------------------------------

@pytest.mark.parametrize("n", range(2, 7))
def test_kendall_matches_pair_count_on_all_permutations(n):
    items = list("abcdef"[:n])
    ref = items[::-1][1:] + items[-1:]  # a non-identity reference order
    for perm in itertools.permutations(items):
        assert abs(kendall_tau(perm, items) - tau_by_pairs(perm, items)) <= 1e-12
        assert abs(kendall_tau(perm, ref) - tau_by_pairs(perm, ref)) <= 1e-12


def test_kendall_extremes_and_errors():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    with pytest.raises(UndefinedTau):
        kendall_tau([1], [1])
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 3])
    with pytest.raises(ValueError):
        kendall_tau([1, 1], [1, 1])


@given(st.permutations(list(range(7))), st.permutations(list(range(7))))
def test_kendall_symmetric_and_reversal_negates(a, b):
    t = kendall_tau(a, b)
    assert -1.0 <= t <= 1.0
    assert t == pytest.approx(kendall_tau(b, a), abs=1e-12)
    assert kendall_tau(a[::-1], b) == pytest.approx(-t, abs=1e-12)


# -- f1 / exact match -------------------------------------------------------

def test_f1_and_em_match_brute_force_on_random_multisets():
    rng = np.random.default_rng(0)
    alphabet = list("abcde")
    for _ in range(1000):
        pred = list(rng.choice(alphabet, size=rng.integers(0, 6)))
        gold = list(rng.choice(alphabet, size=rng.integers(0, 6)))
        assert abs(f1(Counter(pred), Counter(gold)) - f1_by_removal(pred, gold)) <= 1e-12
        assert exact_match(Counter(pred), Counter(gold)) == em_by_sorting(pred, gold)


def test_normalize_answer_drops_case_punctuation_articles():
    assert normalize_answer("The River, Bala!") == Counter(["river", "bala"])
    assert normalize_answer(["An", "apple"]) == Counter(["apple"])
    assert normalize_answer("") == Counter()


@given(st.lists(st.sampled_from("abcd"), max_size=6), st.lists(st.sampled_from("abcd"), max_size=6))
def test_f1_bounds_symmetry_and_em_implies_f1(pred, gold):
    p, g = Counter(pred), Counter(gold)
    v = f1(p, g)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(f1(g, p), abs=1e-12)
    if exact_match(p, g):
        assert v == 1.0


# -- iou x kendall ----------------------------------------------------------

def test_iou_kendall_reference_values():
    assert iou_kendall_reward([1, 2, 3], [1, 2, 3]) == 1.0
    assert iou_kendall_reward([1, 2], [3, 4]) == 0.0
    assert iou_kendall_reward([3, 2, 1], [1, 2, 3]) == 0.0
    assert iou_kendall_reward([], []) == 1.0
    assert iou_kendall_reward([1, 2], []) == 0.0
    # half the union shared, same order
    assert iou_kendall_reward([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5, abs=1e-12)
    # duplicates count once, at their first position
    assert iou_kendall_reward([1, 1, 2], [1, 2]) == 1.0
    assert iou_kendall_reward([2, 1, 2], [1, 2]) == 0.0


@given(st.lists(st.integers(0, 6), max_size=7), st.lists(st.integers(0, 6), max_size=7))
def test_iou_kendall_bounded_and_one_only_for_equal_orders(a, g):
    r = iou_kendall_reward(a, g)
    assert 0.0 <= r <= 1.0
    da, dg = list(dict.fromkeys(a)), list(dict.fromkeys(g))
    assert (r == 1.0) == (da == dg)


def test_iou_kendall_matches_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = list(rng.permutation(8)[: rng.integers(0, 8)])
        g = list(rng.permutation(8)[: rng.integers(0, 8)])
        if not a and not g:
            continue
        common = set(a) & set(g)
        iou = len(common) / len(set(a) | set(g))
        ca, cg = [x for x in a if x in common], [x for x in g if x in common]
        tau = tau_by_pairs(ca, cg) if len(common) >= 2 else 1.0
        assert abs(iou_kendall_reward(a, g) - iou * (tau + 1) / 2) <= 1e-12


# -- aggregation ------------------------------------------------------------

def test_aggregate_reference_values():
    ir, fr, ar = aggregate_metrics([[0.3, 0.5, 0.5]], 3)
    assert (ir, fr) == (30.0, 50.0)
    assert ar == pytest.approx(130 / 3, abs=1e-9)
    assert aggregate_metrics([[0.397]], 10) == (39.7, 39.7, 39.7)
    assert aggregate_metrics([[1.0], [1.0]], 10) == (100.0, 100.0, 100.0)
    # early stop carries the last reward forward
    assert aggregate_metrics([[0.0, 1.0]], 4) == (0.0, 100.0, 75.0)


def test_aggregate_rejects_bad_rows():
    with pytest.raises(ValueError):
        aggregate_metrics([], 3)
    with pytest.raises(ValueError):
        aggregate_metrics([[0.1, 0.2, 0.3, 0.4]], 3)
    with pytest.raises(ValueError):
        aggregate_metrics([[]], 3)


rows = st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=5), min_size=1, max_size=6)


@given(rows)
def test_aggregate_bounds_and_order_invariance(matrix):
    ir, fr, ar = aggregate_metrics(matrix, 5)
    for v in (ir, fr, ar):
        assert 0.0 <= v <= 100.0
    again = aggregate_metrics(matrix[::-1], 5)
    assert all(math.isclose(x, y, abs_tol=1e-9) for x, y in zip((ir, fr, ar), again))


@given(rows)
def test_aggregate_monotone_rows_give_fr_at_least_ir(matrix):
    monotone = [sorted(r) for r in matrix]
    ir, fr, ar = aggregate_metrics(monotone, 5)
    assert fr >= ir - 1e-9
    assert ir - 1e-9 <= ar <= fr + 1e-9
