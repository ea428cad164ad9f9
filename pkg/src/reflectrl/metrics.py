"""Answer and result-list scoring used as environment rewards and in reports."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from typing import Hashable, Iterable, Sequence

import numpy as np

AnswerTokens = Counter  # normalized token multiset

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


class UndefinedTau(ValueError):
    """Kendall tau needs at least two elements."""


def normalize_answer(text: str | Iterable[str]) -> AnswerTokens:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    if not isinstance(text, str):
        text = " ".join(text)
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return Counter(text.split())


def exact_match(pred: AnswerTokens, gold: AnswerTokens) -> int:
    return int(Counter(pred) == Counter(gold))


def f1(pred: AnswerTokens, gold: AnswerTokens) -> float:
    pred, gold = Counter(pred), Counter(gold)
    n_pred, n_gold = sum(pred.values()), sum(gold.values())
    if n_pred == 0 and n_gold == 0:
        return 1.0
    num_same = sum((pred & gold).values())
    if num_same == 0:
        return 0.0
    precision = num_same / n_pred
    recall = num_same / n_gold
    return 2 * precision * recall / (precision + recall)


def kendall_tau(order_a: Sequence[Hashable], order_b: Sequence[Hashable]) -> float:
    """Tau-a between two orderings of the same distinct elements."""
    n = len(order_a)
    if n < 2:
        raise UndefinedTau(f"kendall tau undefined for {n} element(s)")
    pos_b = {x: i for i, x in enumerate(order_b)}
    if len(pos_b) != len(order_b) or len(order_b) != n or len(set(order_a)) != n:
        raise ValueError("orderings must be permutations of one set of distinct elements")
    try:
        ranks = np.array([pos_b[x] for x in order_a])
    except KeyError as e:
        raise ValueError(f"element {e.args[0]!r} missing from second ordering") from None
    upper = np.triu_indices(n, k=1)
    signs = np.sign(ranks[None, :] - ranks[:, None])[upper]
    return float(signs.sum()) / (n * (n - 1) / 2)


def _dedup(records: Iterable[Hashable]) -> list:
    return list(dict.fromkeys(records))


def iou_kendall_reward(A: Sequence[Hashable], G: Sequence[Hashable]) -> float:
    """Jaccard overlap of the result sets times the rescaled order agreement."""
    a, g = _dedup(A), _dedup(G)
    if not a and not g:
        return 1.0
    sa, sg = set(a), set(g)
    common = sa & sg
    iou = len(common) / len(sa | sg)
    if len(common) < 2:
        tau = 1.0
    else:
        tau = kendall_tau([x for x in a if x in common], [x for x in g if x in common])
    return iou * (tau + 1.0) / 2.0


def _mean(values: Sequence[float]) -> float:
    # a constant row must average to exactly that constant
    if all(v == values[0] for v in values):
        return float(values[0])
    return math.fsum(values) / len(values)


def aggregate_metrics(reward_matrix: Sequence[Sequence[float]], K: int) -> tuple[float, float, float]:
    """IR, FR and AR (x100) with carry-forward padding after early stops."""
    if not reward_matrix:
        raise ValueError("no tasks to aggregate")
    rows = []
    for i, rewards in enumerate(reward_matrix):
        if not 1 <= len(rewards) <= K:
            raise ValueError(f"task {i}: {len(rewards)} rewards for K={K}")
        rows.append([float(r) for r in rewards] + [float(rewards[-1])] * (K - len(rewards)))
    ir = _mean([r[0] for r in rows])
    fr = _mean([r[-1] for r in rows])
    ar = _mean([_mean(r) for r in rows])
    return 100.0 * ir, 100.0 * fr, 100.0 * ar
