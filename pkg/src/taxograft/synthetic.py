"""Synthetic taxonomies with controllable difficulty.

The benchmark world is built so that a query's correct parent is findable
through sibling similarity but not through raw embedding proximity: every
topic owns a latent direction shared (noisily) by its leaves, while the
topic node itself gets an unrelated embedding.  Plain cosine matching
against parents therefore fails, child-aware cosine matching lands near
the sibling count, and a model that reads the anchor's children can do
better.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor, backward
from .errors import ConfigError, TaxonomyError
from .model import ModelConfig, info_nce_loss, match_logits
from .rng import seed_stream
from .taxonomy import Concept, Taxonomy, TaxonomySplit, split_from_leaf_sets
from .training import AdamState, adam_step

__all__ = [
    "benchmark_taxonomy",
    "benchmark_split",
    "corrupt_edges",
    "replicated_forest",
    "density_posterior_estimate",
]


def benchmark_taxonomy(
    seed: int = 0,
    num_areas: int = 4,
    topics_per_area: int = 7,
    num_leaves: int = 467,
    dim: int = 64,
    leaf_noise: float = 0.4,
) -> Taxonomy:
    """Root, areas, topics, and leaves clustered per topic; 500 nodes with
    the defaults.

    Leaf embeddings are a unit topic direction plus isotropic noise of
    norm about ``leaf_noise``; area and topic embeddings are independent
    random vectors carrying no information about their leaves.
    """
    rng = seed_stream(seed, "bench")
    num_topics = num_areas * topics_per_area
    if num_leaves < num_topics:
        raise ConfigError("need at least one leaf per topic")
    directions = rng.standard_normal((num_topics, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    concepts = [Concept(0, "root", 0.1 * rng.standard_normal(dim))]
    edges = []
    next_id = 1
    topic_ids = []
    for a in range(num_areas):
        area_id = next_id
        concepts.append(Concept(area_id, f"area{a}", 0.6 * rng.standard_normal(dim)))
        edges.append((0, area_id))
        next_id += 1
        for t in range(topics_per_area):
            topic_ids.append(next_id)
            concepts.append(
                Concept(next_id, f"area{a}/topic{t}", rng.standard_normal(dim))
            )
            edges.append((area_id, next_id))
            next_id += 1
    for leaf in range(num_leaves):
        topic_index = leaf % num_topics
        vec = directions[topic_index] + leaf_noise * rng.standard_normal(dim) / np.sqrt(dim)
        topic = topic_ids[topic_index]
        a, t = divmod(topic_index, topics_per_area)
        concepts.append(
            Concept(next_id, f"area{a}/topic{t}/leaf{leaf // num_topics}", vec)
        )
        edges.append((topic, next_id))
        next_id += 1
    return Taxonomy(concepts, edges)


def benchmark_split(
    taxonomy: Taxonomy,
    num_validation: int = 25,
    num_test: int = 50,
    seed: int = 0,
) -> TaxonomySplit:
    """Hold out fixed counts of random leaves, validation first."""
    leaves = taxonomy.leaves()
    if num_validation + num_test > len(leaves):
        raise TaxonomyError(
            f"cannot mask {num_validation + num_test} of {len(leaves)} leaves"
        )
    order = seed_stream(seed, "bench-split").permutation(len(leaves))
    picked = [leaves[i] for i in order]
    return split_from_leaf_sets(
        taxonomy, picked[:num_validation], picked[num_validation : num_validation + num_test]
    )


def corrupt_edges(
    taxonomy: Taxonomy,
    count: int,
    rng: np.random.Generator,
    leaves_only: bool = False,
) -> tuple[Taxonomy, tuple[tuple[int, int], ...]]:
    """Rewire ``count`` distinct edges to random wrong parents.

    The replacement parent is uniform over nodes that keep the graph a DAG:
    not the child, none of its descendants, and not an existing parent.
    Returns the corrupted taxonomy and the planted (wrong parent, child)
    edges, worst for any model that learned the original structure.
    """
    edges = list(taxonomy.edges())
    if leaves_only:
        leaf_set = set(taxonomy.leaves())
        eligible = [i for i, (_, c) in enumerate(edges) if c in leaf_set]
    else:
        eligible = list(range(len(edges)))
    if count > len(eligible):
        raise TaxonomyError(f"only {len(eligible)} edges eligible, need {count}")
    ids = taxonomy.ids()
    chosen = rng.choice(len(eligible), size=count, replace=False)
    planted = []
    for pick in sorted(int(i) for i in chosen):
        index = eligible[pick]
        old_parent, child = edges[index]
        banned = {child, *taxonomy.parents(child)} | taxonomy.descendants(child)
        while True:
            new_parent = ids[int(rng.integers(0, len(ids)))]
            if new_parent not in banned:
                break
        edges[index] = (new_parent, child)
        planted.append((new_parent, child))
    return Taxonomy(list(taxonomy.concepts()), edges), tuple(planted)


def replicated_forest(
    num_blocks: int,
    dim: int = 16,
    seed: int = 0,
    topics_per_block: int = 9,
    leaves_per_topic: int = 10,
) -> Taxonomy:
    """Disjoint copies of one fixed-shape block, for scaling measurements.

    Every node's degree is independent of the forest size, so work per
    training epoch grows linearly in the edge count.
    """
    if num_blocks < 1:
        raise ConfigError("need at least one block")
    rng = seed_stream(seed, "forest")
    concepts = []
    edges = []
    next_id = 0
    for b in range(num_blocks):
        root = next_id
        concepts.append(Concept(root, f"b{b}", rng.standard_normal(dim)))
        next_id += 1
        for t in range(topics_per_block):
            topic = next_id
            concepts.append(Concept(topic, f"b{b}/t{t}", rng.standard_normal(dim)))
            edges.append((root, topic))
            next_id += 1
            for leaf in range(leaves_per_topic):
                concepts.append(
                    Concept(next_id, f"b{b}/t{t}/l{leaf}", rng.standard_normal(dim))
                )
                edges.append((topic, next_id))
                next_id += 1
    return Taxonomy(concepts, edges)


def density_posterior_estimate(
    seed: int,
    num_anchors: int = 8,
    dim: int = 8,
    batch: int = 128,
    steps: int = 1500,
    lr: float = 0.08,
) -> tuple[np.ndarray, np.ndarray]:
    """Train a bilinear matcher on one query whose parent is stochastic.

    The world has ``num_anchors`` fixed anchor representations and a known
    parent posterior; every instance pairs the sampled positive with all
    remaining anchors as negatives.  At the contrastive optimum the
    softmax over candidate scores recovers the posterior, so the returned
    (estimate, posterior) pair should nearly match.
    """
    rng = seed_stream(seed, "density")
    posterior = rng.dirichlet(np.ones(num_anchors))
    anchor_reprs = rng.standard_normal((num_anchors, dim))
    query = rng.standard_normal((1, dim))

    config = ModelConfig(
        input_dim=dim,
        arch="gcn",
        hidden_dims=(dim,),
        heads=(1,),
        position_dim=0,
        readout="mean",
        matcher="bilinear",
        dropout=0.0,
    )
    # zero weights start the candidate softmax uniform
    params = {"match.bilinear": Tensor(np.zeros((dim, dim)), requires_grad=True)}
    state = AdamState(lr=lr)

    others = {
        j: [k for k in range(num_anchors) if k != j] for j in range(num_anchors)
    }
    for step in range(steps):
        # anneal to cut gradient-noise wander near the optimum
        if step == (2 * steps) // 3:
            state.lr = lr / 10.0
        positives = rng.choice(num_anchors, size=batch, p=posterior)
        rows = []
        groups = []
        positive_rows = []
        for g, j in enumerate(positives):
            positive_rows.append(len(rows))
            rows.append(j)
            rows.extend(others[j])
            groups.extend([g] * num_anchors)
        anchors = Tensor(anchor_reprs[rows])
        queries = Tensor(np.broadcast_to(query, (len(rows), dim)).copy())
        with Tape() as tape:
            logits = match_logits(params, config, anchors, queries)
            loss = info_nce_loss(
                logits,
                np.asarray(groups, dtype=np.intp),
                np.asarray(positive_rows, dtype=np.intp),
                batch,
            )
        backward(tape, loss)
        adam_step(params, state)

    final = match_logits(
        params,
        config,
        Tensor(anchor_reprs),
        Tensor(np.broadcast_to(query, (num_anchors, dim)).copy()),
    ).values[:, 0]
    shifted = np.exp(final - final.max())
    return shifted / shifted.sum(), posterior
