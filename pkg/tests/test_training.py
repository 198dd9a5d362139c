import numpy as np
import pytest

from taxograft.autodiff import Tensor
from taxograft.errors import ConfigError, DivergenceError, TaxonomyError
from taxograft.model import ModelConfig, init_params, parameter_shapes
from taxograft.rng import seed_stream
from taxograft.taxonomy import Concept, Taxonomy, TaxonomySplit, split_from_leaf_sets
from taxograft.training import (
    AdamState,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    fit,
    generate_instances,
    sample_negatives,
)
from taxograft.training import _assemble_batch

from conftest import make_taxonomy, random_dag

LOG_KEYS = ["epoch", "train_loss", "val_MR", "val_Hit@1", "val_Hit@3", "val_MRR", "lr"]


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(negatives=0),
        dict(batch_size=0),
        dict(learning_rate=0.0),
        dict(lr_decay=0.0),
        dict(lr_decay=1.0),
        dict(max_epochs=0),
        dict(scheduler_patience=-1),
        dict(early_stop_patience=-1),
        dict(loss="hinge"),
    ],
)
def test_bad_train_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_train_config_defaults():
    config = TrainConfig()
    assert config.negatives == 31
    assert config.batch_size == 64
    assert config.learning_rate == 0.001
    assert config.scheduler_patience == 3
    assert config.lr_decay == 0.1
    assert config.max_epochs == 100
    assert config.early_stop_patience == 10
    assert config.loss == "info_nce"


# ---------------------------------------------------------------------------
# negative sampling
# ---------------------------------------------------------------------------


class TestSampleNegatives:
    def test_grandparent_is_eligible_but_parent_is_not(self):
        t = make_taxonomy([("root", "A"), ("A", "q")])
        q = t.id_of("q")
        for trial in range(10):
            negs = sample_negatives(t, q, 1, seed_stream(trial, "neg"))
            assert negs == [t.id_of("root")]

    def test_descendants_excluded(self):
        t = make_taxonomy([("root", "A"), ("A", "B"), ("B", "C"), ("root", "D")])
        a = t.id_of("A")
        # eligible for query A: everything minus {A, root, B, C}
        for trial in range(10):
            negs = sample_negatives(t, a, 1, seed_stream(trial, "neg"))
            assert negs == [t.id_of("D")]

    def test_exhaustion_raises(self):
        t = make_taxonomy([("root", "q")])
        with pytest.raises(TaxonomyError):
            sample_negatives(t, t.id_of("q"), 1, seed_stream(0, "neg"))

    def test_distinct_and_eligible_on_random_dags(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            t = random_dag(rng, 14, 0.25)
            for query in t.ids():
                banned = {query} | set(t.parents(query)) | t.descendants(query)
                room = len(t.ids()) - len(banned)
                if room < 3:
                    continue
                negs = sample_negatives(t, query, 3, rng)
                assert len(set(negs)) == 3
                assert not (set(negs) & banned)

    def test_deterministic_per_stream(self, star10):
        q = star10.id_of("L0")
        a = sample_negatives(star10, q, 4, seed_stream(7, "neg"))
        b = sample_negatives(star10, q, 4, seed_stream(7, "neg"))
        assert a == b

    @pytest.mark.parametrize("count", [1, 4])
    def test_draws_are_uniform(self, star10, count):
        # count=1 exercises rejection sampling, count=4 the dense path
        q = star10.id_of("L0")
        eligible = [n for n in star10.ids() if n not in (q, star10.id_of("root"))]
        assert len(eligible) == 9
        rng = seed_stream(0, "uniformity", count)
        draws = 10_000
        counts = {n: 0 for n in eligible}
        for _ in range(draws):
            for n in sample_negatives(star10, q, count, rng):
                counts[n] += 1
        total = draws * count
        expected = total / 9
        # binomial std dev of per-node counts, without replacement makes it smaller
        sigma = np.sqrt(total * (1 / 9) * (8 / 9))
        for n, c in counts.items():
            assert abs(c - expected) < 3.5 * sigma, (n, c, expected)


class TestGenerateInstances:
    def test_one_instance_per_edge(self, diamond):
        instances = generate_instances(diamond, 1, seed_stream(0, "epoch", 0))
        assert len(instances) == diamond.num_edges
        pairs = {(i.positive, i.query) for i in instances}
        assert pairs == set(diamond.edges())

    def test_multi_parent_node_queried_once_per_parent(self, diamond):
        c = diamond.id_of("C")
        instances = generate_instances(diamond, 1, seed_stream(0, "epoch", 0))
        mine = [i for i in instances if i.query == c]
        assert len(mine) == 2
        assert {i.positive for i in mine} == {diamond.id_of("A"), diamond.id_of("B")}

    def test_negative_count_and_eligibility(self):
        rng = np.random.default_rng(11)
        t = None
        while t is None or any(
            len(t.ids()) - 1 - len(set(t.parents(c)) | t.descendants(c)) < 4
            for _, c in t.edges()
        ):
            t = random_dag(rng, 16, 0.2)
        instances = generate_instances(t, 4, seed_stream(1, "epoch", 0))
        assert len(instances) == t.num_edges > 0
        for inst in instances:
            assert len(inst.negatives) == 4
            banned = {inst.query} | set(t.parents(inst.query)) | t.descendants(inst.query)
            assert not (set(inst.negatives) & banned)
            assert inst.positive in t.parents(inst.query)

    def test_same_stream_same_instances(self, star10):
        a = generate_instances(star10, 3, seed_stream(5, "epoch", 2))
        b = generate_instances(star10, 3, seed_stream(5, "epoch", 2))
        assert a == b

    def test_different_epochs_reshuffle(self, star10):
        a = generate_instances(star10, 3, seed_stream(5, "epoch", 0))
        b = generate_instances(star10, 3, seed_stream(5, "epoch", 1))
        assert [i.query for i in a] != [i.query for i in b]


def test_assemble_batch_dedupes_anchors(diamond):
    from taxograft.training import TrainInstance

    a = diamond.id_of("A")
    b = diamond.id_of("B")
    c = diamond.id_of("C")
    root = diamond.id_of("root")
    instances = [
        TrainInstance(query=c, positive=a, negatives=(root,)),
        TrainInstance(query=b, positive=root, negatives=(a,)),
    ]
    anchors, pair_anchor, queries, groups, pos_rows, labels = _assemble_batch(
        diamond, instances
    )
    assert anchors == [a, root]
    np.testing.assert_array_equal(pair_anchor, [0, 1, 1, 0])
    np.testing.assert_array_equal(groups, [0, 0, 1, 1])
    np.testing.assert_array_equal(pos_rows, [0, 2])
    np.testing.assert_array_equal(labels[:, 0], [1.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(queries[0], diamond.concept(c).embedding)
    np.testing.assert_array_equal(queries[2], diamond.concept(b).embedding)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class TestAdam:
    def test_first_step_size_is_learning_rate(self):
        w = Tensor(np.zeros((1, 1)), requires_grad=True)
        w.grad = np.array([[-6.0]])
        state = AdamState(lr=0.1)
        adam_step({"w": w}, state)
        assert w.item() == pytest.approx(0.1, abs=1e-6)
        assert w.grad is None
        assert state.step_count == 1

    def test_gradient_scale_does_not_change_first_step(self):
        for scale in (1e-4, 1.0, 1e4):
            w = Tensor(np.zeros((1, 1)), requires_grad=True)
            w.grad = np.array([[scale]])
            adam_step({"w": w}, AdamState(lr=0.05))
            assert w.item() == pytest.approx(-0.05, abs=1e-5)

    def test_params_without_grad_untouched(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        state = AdamState(lr=0.5)
        adam_step({"w": w}, state)
        np.testing.assert_array_equal(w.values, 1.0)
        assert "w" not in state.m

    def test_converges_on_quadratic(self):
        w = Tensor(np.zeros((1, 1)), requires_grad=True)
        state = AdamState(lr=0.1)
        for _ in range(300):
            w.grad = 2.0 * (w.values - 3.0)
            adam_step({"w": w}, state)
        assert w.item() == pytest.approx(3.0, abs=0.05)

    def test_moment_shapes_match_parameters(self):
        config = ModelConfig(input_dim=4, hidden_dims=(3,), heads=(1,), position_dim=2)
        params = init_params(config, np.random.default_rng(0))
        state = AdamState(lr=0.01)
        for t in params.values():
            t.grad = np.ones(t.shape)
        adam_step(params, state)
        for name, shape in parameter_shapes(config).items():
            assert state.m[name].shape == shape
            assert state.v[name].shape == shape


class TestPlateauScheduler:
    def test_decays_after_patience_exceeded(self):
        state = AdamState(lr=1.0)
        sched = PlateauScheduler(state, factor=0.1, patience=3)
        sched.step(0.5)
        sched.step(0.6)
        for _ in range(3):
            sched.step(0.6)
            assert state.lr == 1.0
        sched.step(0.6)
        assert state.lr == pytest.approx(0.1)
        assert sched.bad_epochs == 0

    def test_improvement_resets_patience(self):
        state = AdamState(lr=1.0)
        sched = PlateauScheduler(state, factor=0.5, patience=2)
        for metric in (0.5, 0.4, 0.4, 0.7, 0.6, 0.6):
            sched.step(metric)
        assert state.lr == 1.0
        sched.step(0.6)
        assert state.lr == pytest.approx(0.5)

    def test_equal_metric_is_not_improvement(self):
        state = AdamState(lr=1.0)
        sched = PlateauScheduler(state, factor=0.1, patience=0)
        sched.step(0.5)
        sched.step(0.5)
        assert state.lr == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# the fit loop
# ---------------------------------------------------------------------------

DIM = 8


def toy_world(leaves_per_parent=5, num_parents=4, noise=0.15, seed=0):
    """Clustered leaves whose parents are NOT embedded near them.

    Leaf embeddings gather around per-cluster directions while parent
    embeddings are drawn independently, so plain cosine matching cannot
    find the right parent but sibling structure can.
    """
    rng = np.random.default_rng(seed)
    directions = np.linalg.qr(rng.standard_normal((DIM, DIM)))[0][:num_parents]
    concepts = []
    edges = []
    concepts.append(Concept(0, "root", rng.standard_normal(DIM) * 0.1))
    next_id = 1
    for p in range(num_parents):
        parent_id = next_id
        concepts.append(Concept(parent_id, f"area{p}", rng.standard_normal(DIM) * 0.4))
        edges.append((0, parent_id))
        next_id += 1
        for leaf in range(leaves_per_parent):
            vec = directions[p] + noise * rng.standard_normal(DIM)
            concepts.append(Concept(next_id, f"area{p}/leaf{leaf}", vec))
            edges.append((parent_id, next_id))
            next_id += 1
    return Taxonomy(concepts, edges)


def toy_split(seed=0):
    t = toy_world(seed=seed)
    # holding out the last leaf of each cluster keeps every parent non-leaf
    held = [t.id_of(f"area{p}/leaf4") for p in range(4)]
    return split_from_leaf_sets(t, held, [])


def toy_model_config(**overrides):
    base = dict(
        input_dim=DIM,
        arch="pgat",
        hidden_dims=(8, 8),
        heads=(1, 1),
        position_dim=4,
        readout="weighted",
        matcher="bilinear",
        matcher_hidden=8,
        dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_train_config(**overrides):
    base = dict(
        seed=0,
        negatives=7,
        batch_size=16,
        learning_rate=0.005,
        max_epochs=5,
        early_stop_patience=50,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def toy_fit():
    return fit(toy_split(), toy_model_config(), toy_train_config(max_epochs=12))


class TestFit:
    def test_log_rows_have_exact_keys(self, toy_fit):
        for row in toy_fit.log:
            assert list(row) == LOG_KEYS

    def test_smoothed_loss_decreases_over_first_five_epochs(self, toy_fit):
        losses = [row["train_loss"] for row in toy_fit.log[:5]]
        smoothed = [np.mean(losses[i : i + 2]) for i in range(4)]
        assert all(b < a for a, b in zip(smoothed, smoothed[1:])), losses

    def test_validation_metrics_populated_and_sane(self, toy_fit):
        last = toy_fit.log[-1]
        assert last["val_MR"] >= 1.0
        assert 0.0 <= last["val_Hit@1"] <= last["val_Hit@3"] <= 1.0
        assert 0.0 < last["val_MRR"] <= 1.0

    def test_best_epoch_has_peak_mrr(self, toy_fit):
        mrrs = [row["val_MRR"] for row in toy_fit.log]
        assert toy_fit.best_epoch == int(np.argmax(mrrs))

    def test_learning_beats_cosine_baseline_hit1(self, toy_fit):
        from taxograft.baselines import closest_parent
        from taxograft.inference import build_anchor_cache, rank_anchors
        from taxograft.metrics import hit_at_k

        split = toy_split()
        cp_ranks = [
            closest_parent(q, split.existing).gold_ranks(gold)
            for q, gold in split.validation_queries
        ]
        cache = build_anchor_cache(split.existing, toy_fit.params, toy_fit.model_config)
        model_ranks = [
            rank_anchors(q, cache, toy_fit.params, toy_fit.model_config).gold_ranks(gold)
            for q, gold in split.validation_queries
        ]
        assert hit_at_k(model_ranks, 1) >= hit_at_k(cp_ranks, 1)

    def test_param_shapes_survive_training(self, toy_fit):
        shapes = parameter_shapes(toy_model_config())
        assert set(toy_fit.params) == set(shapes)
        for name, t in toy_fit.params.items():
            assert t.shape == shapes[name]
            assert np.all(np.isfinite(t.values))

    def test_frozen_seed_reproduces_log_exactly(self):
        a = fit(toy_split(), toy_model_config(), toy_train_config(max_epochs=2))
        b = fit(toy_split(), toy_model_config(), toy_train_config(max_epochs=2))
        assert a.log == b.log
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].values, b.params[name].values)

    def test_bce_loss_variant_trains(self):
        result = fit(
            toy_split(),
            toy_model_config(matcher="mlp"),
            toy_train_config(loss="bce", max_epochs=2),
        )
        assert len(result.log) == 2
        assert all(np.isfinite(row["train_loss"]) for row in result.log)

    def test_no_validation_runs_flat_out(self):
        t = toy_world()
        split = TaxonomySplit(t, (), ())
        result = fit(split, toy_model_config(), toy_train_config(max_epochs=3))
        assert result.epochs_completed == 3
        assert result.best_epoch is None
        for row in result.log:
            assert row["val_MRR"] is None and row["val_MR"] is None

    def test_early_stop_on_flat_validation(self):
        # a learning rate this small cannot move the metric, so the first
        # epoch stays best and patience runs out
        result = fit(
            toy_split(),
            toy_model_config(),
            toy_train_config(
                learning_rate=1e-15, max_epochs=50, early_stop_patience=2
            ),
        )
        assert result.best_epoch == 0
        assert result.epochs_completed == 4  # best + patience exceeded at 3rd extra
        assert len(result.log) == 4

    def test_scheduler_decays_lr_in_log(self):
        result = fit(
            toy_split(),
            toy_model_config(),
            toy_train_config(
                learning_rate=1e-15,
                max_epochs=4,
                scheduler_patience=0,
                early_stop_patience=50,
            ),
        )
        lrs = [row["lr"] for row in result.log]
        assert lrs[0] == lrs[1] == pytest.approx(1e-15)
        assert lrs[2] == pytest.approx(1e-16)
        assert lrs[3] == pytest.approx(1e-17)

    def test_resume_numbering(self):
        result = fit(
            toy_split(),
            toy_model_config(),
            toy_train_config(max_epochs=2),
            start_epoch=5,
        )
        assert [row["epoch"] for row in result.log] == [5, 6]
        assert result.epochs_completed == 7

    def test_initial_params_are_used(self):
        config = toy_model_config()
        params = init_params(config, np.random.default_rng(123))
        marker = float(params["match.bilinear"].values[0, 0])
        result = fit(
            toy_split(), config, toy_train_config(learning_rate=1e-15, max_epochs=1),
            initial_params=params,
        )
        assert result.params["match.bilinear"].values[0, 0] == pytest.approx(
            marker, abs=1e-9
        )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_parameters_abort_with_divergence(self):
        config = toy_model_config()
        params = init_params(config, np.random.default_rng(0))
        params["match.bilinear"].values[:] = np.nan
        with pytest.raises(DivergenceError):
            fit(toy_split(), config, toy_train_config(max_epochs=1),
                initial_params=params)

    def test_dimension_mismatch_rejected(self):
        config = toy_model_config()
        bad = make_taxonomy([("root", "A"), ("root", "B")], dim=DIM + 1)
        split = TaxonomySplit(bad, (), ())
        with pytest.raises(ConfigError):
            fit(split, config, toy_train_config(max_epochs=1))

    def test_edgeless_taxonomy_rejected(self):
        rng = np.random.default_rng(0)
        concepts = [Concept(i, f"n{i}", rng.standard_normal(DIM)) for i in range(3)]
        split = TaxonomySplit(Taxonomy(concepts, []), (), ())
        with pytest.raises(TaxonomyError):
            fit(split, toy_model_config(), toy_train_config(max_epochs=1))
