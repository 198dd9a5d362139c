"""Rule-based placement baselines on the raw embedding space.

Both rank every existing node as a candidate parent by cosine distance.
RankResult scores are negated distances so that the shared
"higher score is better, ties by ascending id" ordering applies.
"""

from __future__ import annotations

import numpy as np

from .inference import RankResult, _order_by_score
from .taxonomy import Concept, Taxonomy

__all__ = ["cosine_distances", "closest_parent", "closest_neighbor"]


def cosine_distances(query_vector: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """1 - cosine similarity per row; rows or queries with zero norm get 1."""
    query_vector = np.asarray(query_vector, dtype=np.float64)
    q_norm = np.linalg.norm(query_vector)
    norms = np.linalg.norm(matrix, axis=1)
    safe = norms * q_norm
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(safe > 0.0, matrix @ query_vector / np.where(safe == 0, 1, safe), 0.0)
    return 1.0 - cos


def closest_parent(query: Concept, taxonomy: Taxonomy) -> RankResult:
    """Rank candidates by ascending cosine distance to the query."""
    dist = cosine_distances(query.embedding, taxonomy.feature_matrix())
    return _order_by_score(query.id, np.asarray(taxonomy.ids()), -dist)


def closest_neighbor(query: Concept, taxonomy: Taxonomy) -> RankResult:
    """Like closest_parent, plus each candidate's mean child distance.

    A parent whose existing children resemble the query ranks higher even
    when the parent itself is far; leaf candidates contribute no child
    term.
    """
    ids = taxonomy.ids()
    dist = cosine_distances(query.embedding, taxonomy.feature_matrix())
    scores = np.empty(len(ids))
    for row, anchor in enumerate(ids):
        children = taxonomy.children(anchor)
        child_term = (
            float(np.mean([dist[taxonomy.row_of(c)] for c in children]))
            if children
            else 0.0
        )
        scores[row] = dist[row] + child_term
    return _order_by_score(query.id, np.asarray(ids), -scores)
