"""Full pipeline on a tiny in-memory taxonomy: split, train, rank, attach.

The world is built so that nearest-neighbor placement must fail: every
leaf clusters around a hidden per-area direction, but the area nodes
themselves carry random embeddings.  Finding a leaf's parent therefore
requires looking at the parent's other children, which is exactly the
signal the trained ranker extracts from candidate neighborhoods.

Training runs on a fixed epoch budget without a validation split: with
only 29 candidate anchors the coarse validation MRR saturates after one
epoch and checkpoint selection would be noise.
"""

import numpy as np

from taxograft import (
    Concept,
    ModelConfig,
    Taxonomy,
    TrainConfig,
    build_anchor_cache,
    closest_parent,
    expand,
    fit,
    rank_anchors,
    ranking_report,
    split_from_leaf_sets,
)

DIM = 8
AREAS = 4
LEAVES = 8

rng = np.random.default_rng(7)
directions = np.linalg.qr(rng.standard_normal((DIM, DIM)))[0][:AREAS]

concepts = [Concept(0, "root", 0.1 * rng.standard_normal(DIM))]
edges = []
for a in range(AREAS):
    area_id = len(concepts)
    # area embeddings are pure noise: cosine similarity cannot find them
    concepts.append(Concept(area_id, f"area{a}", 0.4 * rng.standard_normal(DIM)))
    edges.append((0, area_id))
    for leaf in range(LEAVES):
        vec = directions[a] + 0.1 * rng.standard_normal(DIM)
        concepts.append(Concept(len(concepts), f"area{a}/leaf{leaf}", vec))
        edges.append((area_id, len(concepts) - 1))

taxonomy = Taxonomy(concepts, edges)
print(f"taxonomy: {len(taxonomy.ids())} concepts, {taxonomy.num_edges} edges")

# mask the last leaf of each area as a test query
test = [taxonomy.id_of(f"area{a}/leaf{LEAVES - 1}") for a in range(AREAS)]
split = split_from_leaf_sets(taxonomy, [], test)

model_config = ModelConfig(
    input_dim=DIM,
    arch="pgat",
    hidden_dims=(16, 16),
    heads=(1, 1),
    position_dim=4,
    readout="weighted",
    matcher="bilinear",
    matcher_hidden=16,
)
train_config = TrainConfig(
    seed=0, negatives=9, batch_size=16, learning_rate=0.01, max_epochs=40
)
result = fit(split, model_config, train_config)
print(f"trained {result.epochs_completed} epochs, final loss {result.log[-1]['train_loss']:.3f}")

# every existing node is a candidate parent; representations are cached once
cache = build_anchor_cache(split.existing, result.params, model_config)
model_ranks, baseline_ranks = [], []
for query, gold in split.test_queries:
    model_ranks.append(
        rank_anchors(query, cache, result.params, model_config).gold_ranks(gold)
    )
    baseline_ranks.append(closest_parent(query, split.existing).gold_ranks(gold))
print("trained ranker:", ranking_report(model_ranks))
print("closest parent:", ranking_report(baseline_ranks))

# attach genuinely new concepts; each lands under its top-ranked anchor
new_concepts = [
    Concept(1000, "new/alpha", directions[0] + 0.1 * rng.standard_normal(DIM)),
    Concept(1001, "new/beta", directions[2] + 0.1 * rng.standard_normal(DIM)),
]
grown, suggestions = expand(
    split.existing, new_concepts, result.params, model_config, top_k=3
)
for concept in new_concepts:
    names = [grown.name_of(a) for a, _ in suggestions[concept.id]]
    print(f"{concept.name}: attached under {names[0]} (next guesses {names[1:]})")
