"""Grow an existing concept taxonomy by ranking parent placements.

The pieces compose in pipeline order: ``taxonomy`` loads and splits the
concept DAG, ``egonet`` cuts candidate-parent neighborhoods out of it,
``model`` scores a query concept against an egonet (on top of the
``autodiff`` tape), ``training`` fits the scorer on self-supervision
pairs generated from the taxonomy itself, ``inference`` ranks every
existing node as a parent for new concepts, and ``cleaning`` turns the
same ranker on the taxonomy's own edges.  ``cli`` wires it all into the
``taxograft`` command.
"""

from .autodiff import Tape, Tensor, backward
from .baselines import closest_neighbor, closest_parent, cosine_distances
from .cleaning import (
    CleanReport,
    CleanRow,
    partition_leaves,
    self_clean,
    write_clean_report,
)
from .egonet import (
    NUM_POSITIONS,
    POS_ANCHOR,
    POS_GRANDPARENT,
    POS_SIBLING,
    Egonet,
    Position,
    batch_egonets,
    batch_for_anchors,
    extract_egonet,
)
from .errors import (
    ConfigError,
    CycleError,
    DimensionMismatchError,
    DivergenceError,
    MissingEmbeddingError,
    TaxonomyError,
    UnknownConceptError,
)
from .gradcheck import check_gradients, model_cases, op_cases, run_cases
from .inference import (
    AnchorCache,
    RankResult,
    build_anchor_cache,
    expand,
    rank_anchors,
    rank_queries,
    score_against_cache,
)
from .metrics import (
    hit_at_k,
    mean_rank,
    ranking_report,
    recall_and_f1,
    scaled_mrr,
    wu_palmer,
)
from .model import (
    ARCHITECTURES,
    MATCHERS,
    READOUTS,
    ModelConfig,
    anchor_dim,
    anchor_representations,
    bce_loss,
    info_nce_loss,
    init_params,
    load_checkpoint,
    match_scores,
    pair_logits,
    parameter_shapes,
    save_checkpoint,
)
from .rng import seed_stream
from .synthetic import (
    benchmark_split,
    benchmark_taxonomy,
    corrupt_edges,
    density_posterior_estimate,
    replicated_forest,
)
from .taxonomy import (
    VIRTUAL_ROOT,
    Concept,
    EmbeddingTable,
    Taxonomy,
    TaxonomySplit,
    load_taxonomy,
    mask_leaves,
    read_edge_file,
    read_embedding_file,
    read_split,
    split_from_leaf_sets,
    write_edge_file,
    write_embedding_file,
    write_split,
)
from .training import (
    LOSSES,
    AdamState,
    FitResult,
    PlateauScheduler,
    TrainConfig,
    TrainInstance,
    adam_step,
    fit,
    generate_instances,
    sample_negatives,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # taxonomy
    "VIRTUAL_ROOT",
    "Concept",
    "Taxonomy",
    "TaxonomySplit",
    "EmbeddingTable",
    "load_taxonomy",
    "mask_leaves",
    "split_from_leaf_sets",
    "read_edge_file",
    "write_edge_file",
    "read_embedding_file",
    "write_embedding_file",
    "read_split",
    "write_split",
    # egonets
    "Position",
    "POS_GRANDPARENT",
    "POS_ANCHOR",
    "POS_SIBLING",
    "NUM_POSITIONS",
    "Egonet",
    "extract_egonet",
    "batch_egonets",
    "batch_for_anchors",
    # autodiff core
    "Tensor",
    "Tape",
    "backward",
    # model
    "ARCHITECTURES",
    "READOUTS",
    "MATCHERS",
    "ModelConfig",
    "parameter_shapes",
    "init_params",
    "anchor_dim",
    "anchor_representations",
    "pair_logits",
    "match_scores",
    "info_nce_loss",
    "bce_loss",
    "save_checkpoint",
    "load_checkpoint",
    # gradient checking
    "check_gradients",
    "op_cases",
    "model_cases",
    "run_cases",
    # training
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
    # inference
    "AnchorCache",
    "RankResult",
    "build_anchor_cache",
    "score_against_cache",
    "rank_anchors",
    "rank_queries",
    "expand",
    # metrics and baselines
    "mean_rank",
    "hit_at_k",
    "scaled_mrr",
    "ranking_report",
    "wu_palmer",
    "recall_and_f1",
    "cosine_distances",
    "closest_parent",
    "closest_neighbor",
    # cleaning
    "CleanRow",
    "CleanReport",
    "partition_leaves",
    "self_clean",
    "write_clean_report",
    # synthetic worlds
    "benchmark_taxonomy",
    "benchmark_split",
    "corrupt_edges",
    "replicated_forest",
    "density_posterior_estimate",
    # support
    "seed_stream",
    "ConfigError",
    "TaxonomyError",
    "CycleError",
    "UnknownConceptError",
    "MissingEmbeddingError",
    "DimensionMismatchError",
    "DivergenceError",
]
