import numpy as np
import pytest

from taxograft.errors import ConfigError, TaxonomyError
from taxograft.rng import seed_stream
from taxograft.synthetic import (
    benchmark_split,
    benchmark_taxonomy,
    corrupt_edges,
    density_posterior_estimate,
    replicated_forest,
)


@pytest.fixture(scope="module")
def bench():
    return benchmark_taxonomy(seed=0)


class TestBenchmarkTaxonomy:
    def test_default_shape(self, bench):
        assert len(bench.ids()) == 500
        assert bench.num_edges == 499
        assert len(bench.leaves()) == 467
        assert bench.roots() == (0,)
        assert bench.embedding_dim == 64

    def test_four_level_hierarchy(self, bench):
        depths = {bench.depth(n) for n in bench.ids()}
        assert depths == {1, 2, 3, 4}
        assert all(bench.depth(leaf) == 4 for leaf in bench.leaves())

    def test_every_topic_gets_leaves(self, bench):
        topics = [n for n in bench.ids() if bench.depth(n) == 3]
        assert len(topics) == 28
        sizes = [len(bench.children(t)) for t in topics]
        assert min(sizes) >= 16

    def test_deterministic_per_seed(self):
        a = benchmark_taxonomy(seed=5)
        b = benchmark_taxonomy(seed=5)
        np.testing.assert_array_equal(a.feature_matrix(), b.feature_matrix())
        assert a.edges() == b.edges()

    def test_seeds_differ(self):
        a = benchmark_taxonomy(seed=0)
        b = benchmark_taxonomy(seed=1)
        assert not np.allclose(a.feature_matrix(), b.feature_matrix())

    def test_siblings_similar_parents_uninformative(self, bench):
        """The design premise: same-topic leaves align, the topic itself
        does not."""

        def unit(v):
            return v / np.linalg.norm(v)

        topics = [n for n in bench.ids() if bench.depth(n) == 3]
        within, to_parent, across = [], [], []
        for topic in topics[:8]:
            kids = bench.children(topic)[:6]
            vecs = [unit(bench.concept(k).embedding) for k in kids]
            t_vec = unit(bench.concept(topic).embedding)
            within.extend(float(a @ b) for i, a in enumerate(vecs) for b in vecs[i + 1 :])
            to_parent.extend(float(v @ t_vec) for v in vecs)
        other = unit(bench.concept(bench.children(topics[10])[0]).embedding)
        across.extend(
            float(other @ unit(bench.concept(k).embedding))
            for k in bench.children(topics[0])[:6]
        )
        assert np.mean(within) > 0.75
        assert abs(np.mean(to_parent)) < 0.3
        assert abs(np.mean(across)) < 0.3

    def test_leaf_count_checked(self):
        with pytest.raises(ConfigError):
            benchmark_taxonomy(num_areas=4, topics_per_area=7, num_leaves=27)


class TestBenchmarkSplit:
    def test_counts_and_disjointness(self, bench):
        split = benchmark_split(bench, seed=0)
        assert len(split.validation_queries) == 25
        assert len(split.test_queries) == 50
        val_ids = {q.id for q, _ in split.validation_queries}
        test_ids = {q.id for q, _ in split.test_queries}
        assert not (val_ids & test_ids)
        assert len(split.existing.ids()) == 425

    def test_gold_parents_remain_existing(self, bench):
        split = benchmark_split(bench, seed=1)
        existing = set(split.existing.ids())
        for _, gold in (*split.validation_queries, *split.test_queries):
            assert gold <= existing

    def test_masking_too_many_rejected(self, bench):
        with pytest.raises(TaxonomyError):
            benchmark_split(bench, num_validation=400, num_test=100)


class TestCorruptEdges:
    def test_planted_count_and_membership(self, bench):
        corrupted, planted = corrupt_edges(bench, 10, seed_stream(0, "plant"))
        assert len(planted) == 10
        assert corrupted.num_edges == bench.num_edges
        edge_set = set(corrupted.edges())
        for new_parent, child in planted:
            assert (new_parent, child) in edge_set

    def test_rewired_parent_is_wrong_but_acyclic(self, bench):
        corrupted, planted = corrupt_edges(bench, 10, seed_stream(1, "plant"))
        for new_parent, child in planted:
            assert new_parent not in bench.parents(child)
            assert new_parent not in bench.descendants(child)
            assert new_parent != child
        corrupted.descendants(corrupted.roots()[0])  # cycle check ran at build

    def test_leaves_only_restricts_children(self, bench):
        leaf_set = set(bench.leaves())
        _, planted = corrupt_edges(bench, 10, seed_stream(2, "plant"), leaves_only=True)
        assert all(child in leaf_set for _, child in planted)

    def test_untouched_edges_preserved(self, bench):
        corrupted, planted = corrupt_edges(bench, 5, seed_stream(3, "plant"))
        changed_children = {child for _, child in planted}
        kept = {e for e in bench.edges() if e[1] not in changed_children}
        assert kept <= set(corrupted.edges())

    def test_deterministic(self, bench):
        a = corrupt_edges(bench, 8, seed_stream(4, "plant"))[1]
        b = corrupt_edges(bench, 8, seed_stream(4, "plant"))[1]
        assert a == b

    def test_count_beyond_eligible_rejected(self, bench):
        with pytest.raises(TaxonomyError):
            corrupt_edges(bench, 500, seed_stream(0, "x"))


class TestReplicatedForest:
    def test_block_structure(self):
        t = replicated_forest(3)
        assert len(t.roots()) == 3
        assert t.num_edges == 3 * 99
        for root in t.roots():
            topics = t.children(root)
            assert len(topics) == 9
            for topic in topics:
                assert len(t.children(topic)) == 10

    def test_degree_independent_of_size(self):
        small = replicated_forest(2)
        large = replicated_forest(6)
        degree = lambda t: max(len(t.children(n)) for n in t.ids())
        assert degree(small) == degree(large) == 10

    def test_zero_blocks_rejected(self):
        with pytest.raises(ConfigError):
            replicated_forest(0)


class TestDensityEstimate:
    def test_returns_distributions(self):
        estimate, posterior = density_posterior_estimate(0, batch=16, steps=40)
        for vec in (estimate, posterior):
            assert vec.shape == (8,)
            assert np.all(vec >= 0)
            assert vec.sum() == pytest.approx(1.0)

    def test_posterior_depends_only_on_seed(self):
        _, a = density_posterior_estimate(3, batch=8, steps=5)
        _, b = density_posterior_estimate(3, batch=8, steps=5)
        np.testing.assert_array_equal(a, b)
