"""Shared fixtures: tiny taxonomies, random DAGs, random egonets."""

import numpy as np
import pytest

from taxograft.egonet import POS_ANCHOR, POS_GRANDPARENT, POS_SIBLING, Egonet
from taxograft.taxonomy import Concept, Taxonomy


def make_taxonomy(edge_pairs, dim=3, seed=0, extra_names=()):
    """Taxonomy from (parent_name, child_name) pairs with seeded embeddings.

    Ids follow sorted name order, matching load_taxonomy's convention.
    """
    names = sorted({n for pair in edge_pairs for n in pair} | set(extra_names))
    rng = np.random.default_rng(seed)
    concepts = [Concept(i, name, rng.standard_normal(dim)) for i, name in enumerate(names)]
    id_of = {c.name: c.id for c in concepts}
    return Taxonomy(concepts, [(id_of[p], id_of[c]) for p, c in edge_pairs])


def random_dag(rng, num_nodes, edge_prob, dim=3):
    """Random DAG via the i < j trick: edges only point to higher ids."""
    concepts = [
        Concept(i, f"n{i:03d}", rng.standard_normal(dim)) for i in range(num_nodes)
    ]
    edges = [
        (i, j)
        for i in range(num_nodes)
        for j in range(i + 1, num_nodes)
        if rng.random() < edge_prob
    ]
    return Taxonomy(concepts, edges)


def random_star_egonet(rng, dim, max_grandparents=3, max_siblings=4):
    """A synthetic egonet with random shape and features; anchor is node 0."""
    n_gp = int(rng.integers(0, max_grandparents + 1))
    n_sib = int(rng.integers(0, max_siblings + 1))
    n = 1 + n_gp + n_sib
    positions = np.array(
        [POS_ANCHOR] + [POS_GRANDPARENT] * n_gp + [POS_SIBLING] * n_sib, dtype=np.intp
    )
    return Egonet(
        anchor_id=0,
        node_ids=tuple(range(n)),
        positions=positions,
        features=rng.standard_normal((n, dim)),
        edges=tuple((0, i) for i in range(1, n)),
    )


@pytest.fixture
def chain3():
    """root -> A -> B"""
    return make_taxonomy([("root", "A"), ("A", "B")])


@pytest.fixture
def diamond():
    """root -> {A, B} -> C"""
    return make_taxonomy([("root", "A"), ("root", "B"), ("A", "C"), ("B", "C")])


@pytest.fixture
def star10():
    """root with ten leaf children"""
    return make_taxonomy([("root", f"L{i}") for i in range(10)])
