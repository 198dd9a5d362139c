"""Self-cleaning: find existing edges the model itself cannot reproduce.

Leaves are partitioned into folds; each fold is masked in turn and a model
trained on the remainder re-ranks every masked leaf's candidates.  An
existing parent that lands far down its own leaf's ranking is suspicious,
so rows are reported worst first and ranks beyond a threshold are flagged
together with the model's preferred anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TaxonomyError
from .inference import build_anchor_cache, rank_anchors
from .model import ModelConfig
from .rng import seed_stream
from .taxonomy import Taxonomy, TaxonomySplit, split_from_leaf_sets
from .training import TrainConfig, fit

__all__ = [
    "CleanRow",
    "CleanReport",
    "partition_leaves",
    "self_clean",
    "write_clean_report",
]


@dataclass(frozen=True)
class CleanRow:
    leaf: int
    parent: int
    rank: int
    flagged: bool
    suggestions: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class CleanReport:
    rows: tuple[CleanRow, ...]
    folds: int
    threshold: float

    def flagged(self) -> tuple[CleanRow, ...]:
        return tuple(row for row in self.rows if row.flagged)


def partition_leaves(
    taxonomy: Taxonomy, folds: int, rng: np.random.Generator
) -> list[list[int]]:
    """Disjoint covering shuffle of the leaves into near-equal folds."""
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    leaves = taxonomy.leaves()
    if folds > len(leaves):
        raise TaxonomyError(
            f"cannot split {len(leaves)} leaves into {folds} folds"
        )
    order = rng.permutation(len(leaves))
    return [
        sorted(int(leaves[i]) for i in chunk)
        for chunk in np.array_split(order, folds)
    ]


def self_clean(
    taxonomy: Taxonomy,
    folds: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    threshold: float = 1000,
    num_suggestions: int = 5,
) -> CleanReport:
    """Rank every leaf's existing parents with a model that never saw them.

    Fold models train for the full epoch budget without validation-based
    checkpoint selection: the fold's own labels are exactly what is under
    suspicion, so they must not steer model choice.  One row per
    (leaf, existing parent) edge; rank > threshold flags the row.
    """
    groups = partition_leaves(
        taxonomy, folds, seed_stream(train_config.seed, "clean-folds")
    )
    rows: list[CleanRow] = []
    for fold_leaves in groups:
        split = split_from_leaf_sets(taxonomy, fold_leaves, [])
        blind = TaxonomySplit(split.existing, (), ())
        result = fit(blind, model_config, train_config)
        cache = build_anchor_cache(split.existing, result.params, model_config)
        for query, gold in split.validation_queries:
            ranking = rank_anchors(query, cache, result.params, model_config)
            suggestions = tuple(ranking.top(num_suggestions))
            for parent in sorted(gold):
                rank = ranking.rank_of(parent)
                rows.append(
                    CleanRow(query.id, parent, rank, rank > threshold, suggestions)
                )
    rows.sort(key=lambda r: (-r.rank, r.leaf, r.parent))
    return CleanReport(tuple(rows), folds, threshold)


def write_clean_report(path, taxonomy: Taxonomy, report: CleanReport) -> None:
    """Flagged rows as TSV: leaf, parent, rank, suggested anchor names."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("leaf\tparent\trank_of_parent\tsuggested_parents\n")
        for row in report.flagged():
            names = ",".join(taxonomy.name_of(a) for a, _ in row.suggestions)
            fh.write(
                f"{taxonomy.name_of(row.leaf)}\t{taxonomy.name_of(row.parent)}"
                f"\t{row.rank}\t{names}\n"
            )
