"""Placement inference: cached anchor representations and candidate ranking.

Graph propagation and readout never see the query, so every existing
node's representation is computed once and reused across queries; only the
(cheap) matcher runs per (query, anchor) pair.  Reported scores are the
matcher's pre-activation logits: the score maps (exp, sigmoid) are strictly
increasing, so the ordering is identical and nothing can overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .egonet import batch_for_anchors
from .errors import TaxonomyError
from .model import ModelConfig, anchor_dim, anchor_representations, match_logits
from .taxonomy import Concept, Taxonomy

__all__ = [
    "AnchorCache",
    "RankResult",
    "build_anchor_cache",
    "score_against_cache",
    "rank_anchors",
    "rank_queries",
    "expand",
]


@dataclass(frozen=True, eq=False)
class AnchorCache:
    """Graph embedding of every candidate anchor, rows in ascending-id order.

    Valid only for the (taxonomy, params) pair it was built from; rebuild
    after any change to either.
    """

    anchor_ids: tuple[int, ...]
    matrix: np.ndarray

    def __len__(self) -> int:
        return len(self.anchor_ids)


@dataclass(frozen=True, eq=False)
class RankResult:
    """All candidate anchors for one query, best first.

    Scores are non-increasing matcher logits; equal scores are ordered by
    ascending anchor id.
    """

    query_id: int
    ordered_anchors: np.ndarray
    ordered_scores: np.ndarray

    def rank_of(self, anchor_id: int) -> int:
        """1-based rank of an anchor; raises if it was not a candidate."""
        hits = np.flatnonzero(self.ordered_anchors == anchor_id)
        if hits.size == 0:
            raise TaxonomyError(f"anchor id {anchor_id} was not a ranked candidate")
        return int(hits[0]) + 1

    def gold_ranks(self, gold: frozenset[int] | set[int]) -> list[int]:
        return sorted(self.rank_of(g) for g in gold)

    def top(self, k: int) -> list[tuple[int, float]]:
        return [
            (int(a), float(s))
            for a, s in zip(self.ordered_anchors[:k], self.ordered_scores[:k])
        ]


def _order_by_score(query_id: int, anchor_ids: np.ndarray, scores: np.ndarray) -> RankResult:
    """Sort descending by score; stable over ascending-id input rows."""
    order = np.argsort(-scores, kind="stable")
    return RankResult(query_id, anchor_ids[order], scores[order])


def build_anchor_cache(
    taxonomy: Taxonomy,
    params: dict[str, Tensor],
    config: ModelConfig,
    batch_size: int = 256,
    rng: np.random.Generator | None = None,
) -> AnchorCache:
    """Propagate every node's egonet once, dropout off, in id-order batches."""
    ids = taxonomy.ids()
    if not ids:
        raise TaxonomyError("cannot build a cache over an empty taxonomy")
    matrix = np.empty((len(ids), anchor_dim(config)))
    for start in range(0, len(ids), batch_size):
        chunk = list(ids[start : start + batch_size])
        batch = batch_for_anchors(taxonomy, chunk, rng)
        matrix[start : start + len(chunk)] = anchor_representations(
            params, config, batch
        ).values
    matrix.setflags(write=False)
    return AnchorCache(tuple(ids), matrix)


def score_against_cache(
    query_vector: np.ndarray,
    cache: AnchorCache,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> np.ndarray:
    """Matcher logits of one query against every cached anchor."""
    query_vector = np.asarray(query_vector, dtype=np.float64)
    queries = np.broadcast_to(query_vector, (len(cache), query_vector.size))
    logits = match_logits(
        params, config, Tensor(cache.matrix), Tensor(np.array(queries))
    )
    return logits.values[:, 0]


def rank_anchors(
    query: Concept,
    cache: AnchorCache,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> RankResult:
    scores = score_against_cache(query.embedding, cache, params, config)
    return _order_by_score(query.id, np.asarray(cache.anchor_ids), scores)


def rank_queries(
    queries: list[Concept],
    cache: AnchorCache,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> list[RankResult]:
    return [rank_anchors(q, cache, params, config) for q in queries]


def expand(
    taxonomy: Taxonomy,
    queries: list[Concept],
    params: dict[str, Tensor],
    config: ModelConfig,
    top_k: int = 1,
    rng: np.random.Generator | None = None,
) -> tuple[Taxonomy, dict[int, list[tuple[int, float]]]]:
    """Attach each query under its best-scoring anchor of the original graph.

    New concepts never become candidates for one another.  Returns the
    grown taxonomy plus, per query id, the top_k (anchor id, score)
    suggestions; only the top-1 is inserted.
    """
    if not queries:
        return taxonomy, {}
    cache = build_anchor_cache(taxonomy, params, config, rng=rng)
    suggestions: dict[int, list[tuple[int, float]]] = {}
    attachments = []
    for query in queries:
        result = rank_anchors(query, cache, params, config)
        suggestions[query.id] = result.top(max(1, top_k))
        attachments.append((query, int(result.ordered_anchors[0])))
    return taxonomy.with_attachments(attachments), suggestions
