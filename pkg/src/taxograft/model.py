"""The query-anchor matching network.

An anchor (candidate parent) is represented by propagating its egonet
through a small message-passing network, optionally position-enhanced,
then reducing the node states with a readout.  A matcher scores the anchor
representation against the query's raw feature vector.  Everything runs on
the in-package reverse-mode engine; with no tape active the same code is
the (dropout-free) inference path.

Architectures:
  gcn   symmetric-normalized convolution, fixed coefficients
  gat   attention over each node's neighborhood, multi-head
  pgcn / pgat   same, with per-layer learned position embeddings
                concatenated onto each node's input features

Readouts: "mean" over egonet nodes, "weighted" (softplus position weights),
"concat" (per-position means side by side).  Matchers: "mlp" (sigmoid
output) and "bilinear" (exp of a bilinear form); both expose the
pre-activation logit, and ranking/losses work on logits so large scores
never overflow.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .egonet import NUM_POSITIONS, EgonetBatch
from .errors import ConfigError, DimensionMismatchError

__all__ = [
    "ARCHITECTURES",
    "READOUTS",
    "MATCHERS",
    "ModelConfig",
    "parameter_shapes",
    "init_params",
    "propagate",
    "graph_readout",
    "anchor_representations",
    "match_logits",
    "match_scores",
    "pair_logits",
    "log_scores_from_logits",
    "info_nce_loss",
    "bce_loss",
    "anchor_dim",
    "save_checkpoint",
    "load_checkpoint",
]

ARCHITECTURES = ("gcn", "gat", "pgcn", "pgat")
READOUTS = ("mean", "weighted", "concat")
MATCHERS = ("mlp", "bilinear")

# fixed column order of the concat readout
_READOUT_POSITIONS = tuple(range(NUM_POSITIONS))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters; defaults follow the reference setup.

    ``hidden_dims[k]`` is the per-head output size of layer k, so layer k
    emits heads[k] * hidden_dims[k] features.
    """

    input_dim: int
    arch: str = "pgat"
    hidden_dims: tuple[int, ...] = (250, 500)
    heads: tuple[int, ...] = (4, 1)
    position_dim: int = 50
    readout: str = "weighted"
    matcher: str = "bilinear"
    matcher_hidden: int = 100
    dropout: float = 0.1
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}, got {self.readout!r}")
        if self.matcher not in MATCHERS:
            raise ConfigError(f"matcher must be one of {MATCHERS}, got {self.matcher!r}")
        if len(self.hidden_dims) < 1:
            raise ConfigError("need at least one layer")
        if len(self.heads) != len(self.hidden_dims):
            raise ConfigError("heads and hidden_dims must have one entry per layer")
        if any(h < 1 for h in self.heads) or any(d < 1 for d in self.hidden_dims):
            raise ConfigError("heads and hidden sizes must be positive")
        if self.arch in ("gcn", "pgcn") and any(h != 1 for h in self.heads):
            raise ConfigError("convolutional layers are single-head; set heads to 1s")
        if self.positional and self.position_dim < 1:
            raise ConfigError(f"{self.arch} needs position_dim >= 1")
        if not self.positional and self.position_dim != 0:
            raise ConfigError(f"{self.arch} ignores positions; set position_dim = 0")
        if self.input_dim < 1 or self.matcher_hidden < 1:
            raise ConfigError("input_dim and matcher_hidden must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")

    @property
    def positional(self) -> bool:
        return self.arch in ("pgcn", "pgat")

    @property
    def attentional(self) -> bool:
        return self.arch in ("gat", "pgat")

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims)

    def layer_input_dim(self, layer: int) -> int:
        base = self.input_dim if layer == 0 else (
            self.heads[layer - 1] * self.hidden_dims[layer - 1]
        )
        return base + (self.position_dim if self.positional else 0)


def anchor_dim(config: ModelConfig) -> int:
    """Width of one anchor representation after the readout."""
    final = config.heads[-1] * config.hidden_dims[-1]
    return final * NUM_POSITIONS if config.readout == "concat" else final


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    """Every learnable tensor's name and shape, in a fixed order."""
    shapes: dict[str, tuple[int, int]] = {}
    for k in range(config.num_layers):
        d_in = config.layer_input_dim(k)
        d_out = config.hidden_dims[k]
        for m in range(config.heads[k]):
            shapes[f"prop.{k}.head{m}.weight"] = (d_in, d_out)
            if config.attentional:
                shapes[f"prop.{k}.head{m}.attn_dst"] = (d_out, 1)
                shapes[f"prop.{k}.head{m}.attn_src"] = (d_out, 1)
        if config.positional:
            shapes[f"pos.{k}"] = (NUM_POSITIONS, config.position_dim)
    if config.readout == "weighted":
        shapes["readout.position_weight"] = (NUM_POSITIONS, 1)
    a_dim = anchor_dim(config)
    if config.matcher == "mlp":
        shapes["match.w1"] = (a_dim + config.input_dim, config.matcher_hidden)
        shapes["match.b1"] = (1, config.matcher_hidden)
        shapes["match.w2"] = (config.matcher_hidden, 1)
        shapes["match.b2"] = (1, 1)
    else:
        shapes["match.bilinear"] = (a_dim, config.input_dim)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases and readout weights, small
    normal position tables.  Zero readout weights make the weighted readout
    start as a plain mean."""
    params: dict[str, Tensor] = {}
    for name, (rows, cols) in parameter_shapes(config).items():
        if name.startswith("pos."):
            values = 0.1 * rng.standard_normal((rows, cols))
        elif name in ("readout.position_weight", "match.b1", "match.b2"):
            values = np.zeros((rows, cols))
        else:
            limit = np.sqrt(6.0 / (rows + cols))
            values = rng.uniform(-limit, limit, size=(rows, cols))
        params[name] = Tensor(values, requires_grad=True)
    return params


def _validate_params(params: dict[str, Tensor], config: ModelConfig) -> None:
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigError(f"parameter names mismatch: missing {missing}, extra {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionMismatchError(
                f"{name}: expected shape {shape}, got {params[name].shape}"
            )


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _aggregate_head(
    config: ModelConfig,
    params: dict[str, Tensor],
    batch: EgonetBatch,
    h_in: Tensor,
    layer: int,
    head: int,
) -> Tensor:
    """One head of one layer: transform, aggregate over neighborhoods, ReLU."""
    w = params[f"prop.{layer}.head{head}.weight"]
    hw = ad.matmul(h_in, w)
    messages = ad.row_gather(hw, batch.agg_src)
    num_nodes = batch.num_nodes
    if config.attentional:
        dst_score = ad.matmul(ad.row_gather(hw, batch.agg_dst),
                              params[f"prop.{layer}.head{head}.attn_dst"])
        src_score = ad.matmul(messages, params[f"prop.{layer}.head{head}.attn_src"])
        logits = ad.leaky_relu(ad.add(dst_score, src_score), config.leaky_slope)
        weights = ad.segment_softmax(logits, batch.agg_dst, num_nodes)
    else:
        weights = Tensor(batch.gcn_coeff)
    agg = ad.segment_weighted_sum(messages, weights, batch.agg_dst, num_nodes)
    return ad.relu(agg)


def propagate(
    params: dict[str, Tensor],
    config: ModelConfig,
    batch: EgonetBatch,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-node states after all layers; shape (num_nodes, final width).

    Dropout touches only the raw input node features, never the position
    embeddings, and only while training.
    """
    h = ad.dropout(Tensor(batch.features), config.dropout, training, rng)
    for k in range(config.num_layers):
        if config.positional:
            pos_rows = ad.row_gather(params[f"pos.{k}"], batch.positions)
            h = ad.concat_cols(h, pos_rows)
        head_outputs = [
            _aggregate_head(config, params, batch, h, k, m)
            for m in range(config.heads[k])
        ]
        h = head_outputs[0]
        for extra in head_outputs[1:]:
            h = ad.concat_cols(h, extra)
    return h


def _segment_mean(
    node_states: Tensor, rows: np.ndarray, segments: np.ndarray, num_segments: int
) -> Tensor:
    """Mean of the selected rows within each segment; zeros where empty."""
    counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
    inv = Tensor((1.0 / counts[segments])[:, None])
    picked = ad.row_gather(node_states, rows)
    return ad.segment_weighted_sum(picked, inv, segments, num_segments)


def graph_readout(
    params: dict[str, Tensor],
    config: ModelConfig,
    batch: EgonetBatch,
    node_states: Tensor,
) -> Tensor:
    """Reduce per-node states to one row per egonet."""
    num = batch.num_egonets
    all_rows = np.arange(batch.num_nodes)
    if config.readout == "mean":
        return _segment_mean(node_states, all_rows, batch.egonet_index, num)
    if config.readout == "weighted":
        alphas = ad.softplus(
            ad.row_gather(params["readout.position_weight"], batch.positions)
        )
        total = ad.segment_weighted_sum(node_states, alphas, batch.egonet_index, num)
        denom = ad.segment_weighted_sum(
            Tensor(np.ones((batch.num_nodes, 1))), alphas, batch.egonet_index, num
        )
        ones = Tensor(np.ones((num, 1)))
        return ad.scale_rows(total, ad.div(ones, denom))
    parts = []
    for position in _READOUT_POSITIONS:
        rows = np.flatnonzero(batch.positions == position)
        parts.append(_segment_mean(node_states, rows, batch.egonet_index[rows], num))
    out = parts[0]
    for part in parts[1:]:
        out = ad.concat_cols(out, part)
    return out


def anchor_representations(
    params: dict[str, Tensor],
    config: ModelConfig,
    batch: EgonetBatch,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Graph embedding of every egonet in the batch, one row each."""
    _validate_params(params, config)
    node_states = propagate(params, config, batch, training, rng)
    return graph_readout(params, config, batch, node_states)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


def match_logits(
    params: dict[str, Tensor],
    config: ModelConfig,
    anchors: Tensor,
    queries: Tensor,
) -> Tensor:
    """Pre-activation matching score for each (anchor row, query row) pair."""
    if anchors.shape[0] != queries.shape[0]:
        raise DimensionMismatchError(
            f"{anchors.shape[0]} anchor rows vs {queries.shape[0]} query rows"
        )
    if queries.shape[1] != config.input_dim:
        raise DimensionMismatchError(
            f"queries must have {config.input_dim} columns, got {queries.shape[1]}"
        )
    if config.matcher == "mlp":
        joint = ad.concat_cols(anchors, queries)
        hidden = ad.leaky_relu(
            ad.add_bias(ad.matmul(joint, params["match.w1"]), params["match.b1"]),
            config.leaky_slope,
        )
        return ad.add_bias(ad.matmul(hidden, params["match.w2"]), params["match.b2"])
    transformed = ad.matmul(anchors, params["match.bilinear"])
    return ad.rowsum(ad.mul(transformed, queries))


def match_scores(logits: Tensor, matcher: str) -> np.ndarray:
    """The matcher's positive score: sigmoid(logit) for mlp, exp for bilinear."""
    if matcher == "mlp":
        return ad.sigmoid(logits).values
    return np.exp(logits.values)


def log_scores_from_logits(logits: Tensor, matcher: str) -> Tensor:
    """log of the matching score, computed stably from the logit."""
    if matcher == "mlp":
        # log sigmoid(x) = -softplus(-x)
        return ad.scale(ad.softplus(ad.scale(logits, -1.0)), -1.0)
    return logits


def pair_logits(
    params: dict[str, Tensor],
    config: ModelConfig,
    batch: EgonetBatch,
    queries: Tensor | np.ndarray,
    pair_anchor: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Score query row i against egonet pair_anchor[i]; shape (pairs, 1).

    Anchors repeated across pairs are propagated once and gathered.
    """
    if not isinstance(queries, Tensor):
        queries = Tensor(queries)
    reprs = anchor_representations(params, config, batch, training, rng)
    anchors = ad.row_gather(reprs, np.asarray(pair_anchor, dtype=np.intp))
    return match_logits(params, config, anchors, queries)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


def info_nce_loss(
    log_scores: Tensor,
    groups: np.ndarray,
    positive_rows: np.ndarray,
    num_groups: int,
) -> Tensor:
    """Contrastive loss over groups of one positive plus N negative pairs.

    Per group: log(sum of scores) - log(positive score), all in log domain,
    then averaged across groups.  positive_rows[g] is the positive's row
    for group g.
    """
    lse = ad.segment_logsumexp(log_scores, groups, num_groups)
    pos = ad.row_gather(log_scores, np.asarray(positive_rows, dtype=np.intp))
    return ad.mean_reduce(ad.add(lse, ad.scale(pos, -1.0)))


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross entropy from logits: softplus(l) - y*l."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.shape:
        raise DimensionMismatchError(
            f"labels shape {labels.shape} vs logits {logits.shape}"
        )
    return ad.mean_reduce(ad.add(ad.softplus(logits), ad.mul(logits, Tensor(-labels))))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "taxograft-checkpoint-v1"


def save_checkpoint(
    path: str | Path,
    params: dict[str, Tensor],
    config: ModelConfig,
    extra: dict | None = None,
) -> None:
    """JSON container: config, parameter shapes + row-major values, extras."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "config": asdict(config),
        "extra": extra or {},
        "parameters": {
            name: {
                "shape": list(t.shape),
                "values": [float(v) for v in t.values.ravel()],
            }
            for name, t in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=None, separators=(",", ":"), sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], ModelConfig, dict]:
    """Read a checkpoint and validate every shape against its config."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a recognized checkpoint file")
    config = ModelConfig(**payload["config"])
    params: dict[str, Tensor] = {}
    for name, entry in payload["parameters"].items():
        rows, cols = entry["shape"]
        values = np.array(entry["values"], dtype=np.float64).reshape(rows, cols)
        params[name] = Tensor(values, requires_grad=True)
    _validate_params(params, config)
    return params, config, payload.get("extra", {})
