"""Ranking and placement-quality metrics.

Rank-based metrics consume, per query, the list of 1-based ranks at which
that query's gold parents appeared in a candidate ranking.  They are pure
reductions, so they stay decoupled from how the rankings were produced.
"""

from __future__ import annotations

import math
from typing import Sequence

from .taxonomy import Taxonomy

__all__ = [
    "mean_rank",
    "hit_at_k",
    "scaled_mrr",
    "ranking_report",
    "wu_palmer",
    "recall_and_f1",
]

GoldRanks = Sequence[Sequence[int]]


def _validate(gold_ranks: GoldRanks) -> None:
    if not gold_ranks:
        raise ValueError("no queries to score")
    for ranks in gold_ranks:
        if not ranks:
            raise ValueError("every query needs at least one gold rank")
        if any(r < 1 for r in ranks):
            raise ValueError("ranks are 1-based")


def mean_rank(gold_ranks: GoldRanks) -> float:
    """Average over every (query, gold parent) pair, pooled."""
    _validate(gold_ranks)
    pooled = [r for ranks in gold_ranks for r in ranks]
    return sum(pooled) / len(pooled)


def hit_at_k(gold_ranks: GoldRanks, k: int) -> float:
    """Fraction of queries with at least one gold parent in the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _validate(gold_ranks)
    hits = sum(1 for ranks in gold_ranks if min(ranks) <= k)
    return hits / len(gold_ranks)


def scaled_mrr(gold_ranks: GoldRanks) -> float:
    """Mean reciprocal rank on the coarsened scale ceil(rank / 10).

    Per query, reciprocal coarse ranks are averaged over that query's gold
    parents; queries then average uniformly.
    """
    _validate(gold_ranks)
    total = 0.0
    for ranks in gold_ranks:
        total += sum(1.0 / math.ceil(r / 10.0) for r in ranks) / len(ranks)
    return total / len(gold_ranks)


def ranking_report(gold_ranks: GoldRanks, hit_ks: tuple[int, ...] = (1, 3)) -> dict:
    report = {"MR": mean_rank(gold_ranks)}
    for k in hit_ks:
        report[f"Hit@{k}"] = hit_at_k(gold_ranks, k)
    report["MRR"] = scaled_mrr(gold_ranks)
    return report


def wu_palmer(taxonomy: Taxonomy, predicted: int, gold: int) -> float:
    """2 * depth(lca) / (depth(predicted) + depth(gold)).

    Equals 1 exactly when predicted == gold; 0 only when the two nodes
    live under different roots of a multi-root taxonomy.
    """
    lca = taxonomy.lca(predicted, gold)
    return (
        2.0
        * taxonomy.depth(lca)
        / (taxonomy.depth(predicted) + taxonomy.depth(gold))
    )


def recall_and_f1(placed: int, total: int, mean_wup: float) -> tuple[float, float]:
    """Recall = placed / total; F1 harmonic-means recall with Wu&Palmer."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if placed > total:
        raise ValueError("placed cannot exceed total")
    recall = placed / total
    if recall == 0.0 or mean_wup == 0.0:
        return recall, 0.0
    return recall, 2.0 * mean_wup * recall / (mean_wup + recall)
