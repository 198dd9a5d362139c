"""Self-supervised training loop.

Every edge of the existing taxonomy yields one training instance per
epoch: the child acts as a query, its parent is the positive anchor, and
N uniformly sampled nodes that are neither parents nor descendants of the
query are negatives.  Instances sharing an epoch are grouped into
mini-batches; anchors repeated within a batch are propagated once.

Optimization is Adam with a reduce-on-plateau schedule driven by
validation MRR, early stopping on the same signal, and the best-validation
parameters returned.  All randomness derives from per-purpose streams of
the run seed, so a fixed (config, seed) reproduces the log exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward
from .egonet import Egonet, batch_egonets, extract_egonet
from .errors import ConfigError, DivergenceError, TaxonomyError
from .inference import build_anchor_cache, rank_anchors
from .metrics import ranking_report
from .model import (
    ModelConfig,
    bce_loss,
    info_nce_loss,
    init_params,
    log_scores_from_logits,
    pair_logits,
)
from .rng import seed_stream
from .taxonomy import Taxonomy, TaxonomySplit

__all__ = [
    "LOSSES",
    "TrainConfig",
    "TrainInstance",
    "AdamState",
    "PlateauScheduler",
    "FitResult",
    "sample_negatives",
    "generate_instances",
    "adam_step",
    "fit",
]

LOSSES = ("info_nce", "bce")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    negatives: int = 31
    batch_size: int = 64
    learning_rate: float = 0.001
    scheduler_patience: int = 3
    lr_decay: float = 0.1
    max_epochs: int = 100
    early_stop_patience: int = 10
    loss: str = "info_nce"

    def __post_init__(self):
        if self.negatives < 1:
            raise ConfigError(f"negatives must be >= 1, got {self.negatives}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.scheduler_patience < 0 or self.early_stop_patience < 0:
            raise ConfigError("patience values must be >= 0")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass(frozen=True)
class TrainInstance:
    """One positive (parent, child-as-query) edge plus N negative anchors."""

    query: int
    positive: int
    negatives: tuple[int, ...]


# ---------------------------------------------------------------------------
# self-supervision sampling
# ---------------------------------------------------------------------------


def sample_negatives(
    taxonomy: Taxonomy, query: int, count: int, rng: np.random.Generator
) -> list[int]:
    """Uniform distinct nodes that are neither parents nor descendants of
    the query (so grand-parents and unrelated ancestors stay eligible)."""
    banned = {query} | set(taxonomy.parents(query)) | taxonomy.descendants(query)
    ids = taxonomy.ids()
    num_eligible = len(ids) - len(banned)
    if num_eligible < count:
        raise TaxonomyError(
            f"only {num_eligible} eligible negatives for "
            f"{taxonomy.name_of(query)!r}, need {count}"
        )
    if count * 3 >= num_eligible:
        eligible = [i for i in ids if i not in banned]
        picked = rng.choice(len(eligible), size=count, replace=False)
        return [eligible[i] for i in picked]
    # banned sets are tiny relative to the graph: rejection stays O(count)
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < count:
        candidate = ids[int(rng.integers(0, len(ids)))]
        if candidate in banned or candidate in seen:
            continue
        seen.add(candidate)
        out.append(candidate)
    return out


def generate_instances(
    taxonomy: Taxonomy, negatives: int, rng: np.random.Generator
) -> list[TrainInstance]:
    """One instance per edge in seeded-shuffled order, negatives included.

    A node with C parents appears as the query of exactly C instances.
    """
    edges = taxonomy.edges()
    order = rng.permutation(len(edges))
    instances = []
    for i in order:
        parent, child = edges[i]
        negs = tuple(sample_negatives(taxonomy, child, negatives, rng))
        instances.append(TrainInstance(child, parent, negs))
    return instances


# ---------------------------------------------------------------------------
# optimizer and scheduler
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One update over every parameter carrying a gradient; clears grads."""
    state.step_count += 1
    bias1 = 1.0 - state.beta1**state.step_count
    bias2 = 1.0 - state.beta2**state.step_count
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        state.m[name] = m = state.beta1 * m + (1.0 - state.beta1) * g
        state.v[name] = v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        tensor.values -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        tensor.grad = None


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without improvement of a maximized metric."""

    state: AdamState
    factor: float
    patience: int
    best: float = -np.inf
    bad_epochs: int = 0

    def step(self, metric: float) -> None:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.state.lr *= self.factor
                self.bad_epochs = 0


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    params: dict[str, Tensor]
    model_config: ModelConfig
    train_config: TrainConfig
    log: tuple[dict, ...]
    best_epoch: int | None
    epochs_completed: int


def _assemble_batch(taxonomy: Taxonomy, instances: list[TrainInstance]):
    """Flatten instances to pair arrays; anchors deduplicated in batch order."""
    anchor_index: dict[int, int] = {}
    pair_anchor: list[int] = []
    query_rows: list[int] = []
    groups: list[int] = []
    positive_rows: list[int] = []
    for g, inst in enumerate(instances):
        q_row = taxonomy.row_of(inst.query)
        positive_rows.append(len(pair_anchor))
        for anchor in (inst.positive, *inst.negatives):
            pair_anchor.append(anchor_index.setdefault(anchor, len(anchor_index)))
            query_rows.append(q_row)
            groups.append(g)
    labels = np.zeros((len(pair_anchor), 1))
    labels[positive_rows] = 1.0
    queries = taxonomy.feature_matrix()[query_rows]
    return (
        list(anchor_index),
        np.asarray(pair_anchor, dtype=np.intp),
        queries,
        np.asarray(groups, dtype=np.intp),
        np.asarray(positive_rows, dtype=np.intp),
        labels,
    )


def _validation_metrics(split, params, config):
    cache = build_anchor_cache(split.existing, params, config)
    gold_ranks = [
        rank_anchors(query, cache, params, config).gold_ranks(gold)
        for query, gold in split.validation_queries
    ]
    return ranking_report(gold_ranks)


def fit(
    split: TaxonomySplit,
    model_config: ModelConfig,
    train_config: TrainConfig,
    initial_params: dict[str, Tensor] | None = None,
    start_epoch: int = 0,
) -> FitResult:
    """Train on the split's existing graph; returns best-validation params.

    With no validation queries the loop runs max_epochs flat out (no
    scheduling, no early stop) and returns the final parameters.
    """
    existing = split.existing
    if existing.num_edges == 0:
        raise TaxonomyError("cannot train on a taxonomy with no edges")
    if model_config.input_dim != existing.embedding_dim:
        raise ConfigError(
            f"model input_dim {model_config.input_dim} != "
            f"embedding dimension {existing.embedding_dim}"
        )
    seed = train_config.seed
    params = initial_params if initial_params is not None else init_params(
        model_config, seed_stream(seed, "init")
    )
    opt = AdamState(lr=train_config.learning_rate)
    scheduler = PlateauScheduler(
        opt, train_config.lr_decay, train_config.scheduler_patience
    )
    has_validation = len(split.validation_queries) > 0

    egonets: dict[int, Egonet] = {}

    def egonet_of(anchor: int) -> Egonet:
        ego = egonets.get(anchor)
        if ego is None:
            ego = extract_egonet(existing, anchor, seed_stream(seed, "siblings", anchor))
            egonets[anchor] = ego
        return ego

    log: list[dict] = []
    best_epoch: int | None = None
    best_mrr = -np.inf
    best_params: dict[str, Tensor] | None = None
    epochs_since_best = 0
    epochs_completed = start_epoch

    for epoch in range(start_epoch, start_epoch + train_config.max_epochs):
        epoch_rng = seed_stream(seed, "epoch", epoch)
        instances = generate_instances(existing, train_config.negatives, epoch_rng)
        loss_sum = 0.0
        for batch_idx in range(0, len(instances), train_config.batch_size):
            chunk = instances[batch_idx : batch_idx + train_config.batch_size]
            anchors, pair_anchor, queries, groups, pos_rows, labels = _assemble_batch(
                existing, chunk
            )
            batch = batch_egonets([egonet_of(a) for a in anchors])
            dropout_rng = seed_stream(seed, "dropout", epoch, batch_idx)
            with Tape() as tape:
                logits = pair_logits(
                    params, model_config, batch, queries, pair_anchor,
                    training=True, rng=dropout_rng,
                )
                if train_config.loss == "info_nce":
                    log_scores = log_scores_from_logits(logits, model_config.matcher)
                    loss = info_nce_loss(log_scores, groups, pos_rows, len(chunk))
                else:
                    loss = bce_loss(logits, labels)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss {loss_value} at epoch {epoch}, "
                    f"batch {batch_idx // train_config.batch_size}"
                )
            backward(tape, loss)
            adam_step(params, opt)
            loss_sum += loss_value * len(chunk)
        train_loss = loss_sum / len(instances)
        epochs_completed = epoch + 1

        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_MR": None,
            "val_Hit@1": None,
            "val_Hit@3": None,
            "val_MRR": None,
            "lr": opt.lr,
        }
        if has_validation:
            report = _validation_metrics(split, params, model_config)
            row.update(
                {
                    "val_MR": report["MR"],
                    "val_Hit@1": report["Hit@1"],
                    "val_Hit@3": report["Hit@3"],
                    "val_MRR": report["MRR"],
                }
            )
            mrr = report["MRR"]
            if mrr > best_mrr:
                best_mrr = mrr
                best_epoch = epoch
                best_params = {
                    name: Tensor(t.values.copy(), requires_grad=True)
                    for name, t in params.items()
                }
                epochs_since_best = 0
            else:
                epochs_since_best += 1
            scheduler.step(mrr)
        log.append(row)
        if has_validation and epochs_since_best > train_config.early_stop_patience:
            break

    final = best_params if best_params is not None else params
    return FitResult(
        params=final,
        model_config=model_config,
        train_config=train_config,
        log=tuple(log),
        best_epoch=best_epoch,
        epochs_completed=epochs_completed,
    )
