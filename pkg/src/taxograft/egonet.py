"""Ego network extraction around candidate anchors, plus mini-batching.

An egonet is the 1-hop star around an anchor node: the anchor itself, its
taxonomy parents (grand-parents of a would-be child), and its children
(siblings of a would-be child).  Edges are undirected and anchor-incident
only; every node additionally aggregates from itself, so the neighborhood
of a node u is neighbors(u) plus u.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .rng import seed_stream
from .taxonomy import Taxonomy

__all__ = [
    "Position",
    "POS_GRANDPARENT",
    "POS_ANCHOR",
    "POS_SIBLING",
    "NUM_POSITIONS",
    "Egonet",
    "extract_egonet",
    "batch_egonets",
    "batch_for_anchors",
]


class Position(IntEnum):
    """Role of an egonet node relative to a query placed under the anchor."""

    GRANDPARENT = 0
    ANCHOR = 1
    SIBLING = 2


POS_GRANDPARENT = Position.GRANDPARENT
POS_ANCHOR = Position.ANCHOR
POS_SIBLING = Position.SIBLING
NUM_POSITIONS = len(Position)

# anchors with more children than this get a seeded sibling subsample
MAX_SIBLINGS = 1000


@dataclass(frozen=True, eq=False)
class Egonet:
    """One anchor's star: ids, per-node roles, features, local star edges.

    Node 0 is always the anchor, followed by id-sorted grand-parents, then
    id-sorted siblings.  ``edges`` holds undirected local index pairs
    (0, i); self-loops are implied, not stored.
    """

    anchor_id: int
    node_ids: tuple[int, ...]
    positions: np.ndarray
    features: np.ndarray
    edges: tuple[tuple[int, int], ...]

    @property
    def size(self) -> int:
        return len(self.node_ids)


def extract_egonet(
    taxonomy: Taxonomy,
    anchor: int,
    rng: np.random.Generator | None = None,
    max_siblings: int = MAX_SIBLINGS,
) -> Egonet:
    """The anchor plus its parents and children with position labels.

    Anchors with more than ``max_siblings`` children get a uniform sibling
    subsample drawn from ``rng`` (or a stream derived from the anchor id
    when none is given, keeping extraction deterministic).
    """
    grandparents = taxonomy.parents(anchor)
    siblings = taxonomy.children(anchor)
    if len(siblings) > max_siblings:
        if rng is None:
            rng = seed_stream(0, "siblings", anchor)
        picked = rng.choice(len(siblings), size=max_siblings, replace=False)
        siblings = tuple(siblings[i] for i in sorted(picked))

    node_ids = (anchor, *grandparents, *siblings)
    positions = np.array(
        [POS_ANCHOR]
        + [POS_GRANDPARENT] * len(grandparents)
        + [POS_SIBLING] * len(siblings),
        dtype=np.intp,
    )
    rows = [taxonomy.row_of(n) for n in node_ids]
    features = taxonomy.feature_matrix()[rows]
    edges = tuple((0, i) for i in range(1, len(node_ids)))
    return Egonet(anchor, node_ids, positions, features, edges)


@dataclass(frozen=True, eq=False)
class EgonetBatch:
    """Disjoint union of egonets laid out for flat segment aggregation.

    ``agg_dst``/``agg_src`` enumerate every message, self-loops included;
    ``gcn_coeff`` carries the symmetric normalization
    1/sqrt(|neighborhood(dst)| * |neighborhood(src)|) per message.
    """

    features: np.ndarray
    positions: np.ndarray
    egonet_index: np.ndarray
    anchor_rows: np.ndarray
    agg_dst: np.ndarray
    agg_src: np.ndarray
    gcn_coeff: np.ndarray

    @property
    def num_egonets(self) -> int:
        return len(self.anchor_rows)

    @property
    def num_nodes(self) -> int:
        return len(self.positions)


def batch_egonets(egonets: list[Egonet]) -> EgonetBatch:
    """Stack egonets block-diagonally; no cross-egonet messages exist."""
    if not egonets:
        raise ValueError("cannot batch zero egonets")
    dims = {e.features.shape[1] for e in egonets}
    if len(dims) != 1:
        raise ValueError(f"mixed feature dimensions in batch: {sorted(dims)}")

    features = np.vstack([e.features for e in egonets])
    positions = np.concatenate([e.positions for e in egonets])
    sizes = [e.size for e in egonets]
    egonet_index = np.repeat(np.arange(len(egonets)), sizes)
    offsets = np.cumsum([0] + sizes[:-1])
    anchor_rows = np.asarray(offsets, dtype=np.intp)

    dst, src = [], []
    for e, off in zip(egonets, offsets):
        # self-loops for every node, then both directions of each star edge
        for local in range(e.size):
            dst.append(off + local)
            src.append(off + local)
        for a, b in e.edges:
            dst.append(off + a)
            src.append(off + b)
            dst.append(off + b)
            src.append(off + a)
    agg_dst = np.asarray(dst, dtype=np.intp)
    agg_src = np.asarray(src, dtype=np.intp)
    neighborhood = np.bincount(agg_dst, minlength=len(positions))
    coeff = (1.0 / np.sqrt(neighborhood[agg_dst] * neighborhood[agg_src]))[:, None]
    return EgonetBatch(
        features=features,
        positions=positions,
        egonet_index=egonet_index,
        anchor_rows=anchor_rows,
        agg_dst=agg_dst,
        agg_src=agg_src,
        gcn_coeff=coeff,
    )


def batch_for_anchors(
    taxonomy: Taxonomy,
    anchors: list[int],
    rng: np.random.Generator | None = None,
) -> EgonetBatch:
    """Extract and batch the egonets of the given anchors in one step."""
    return batch_egonets([extract_egonet(taxonomy, a, rng) for a in anchors])
