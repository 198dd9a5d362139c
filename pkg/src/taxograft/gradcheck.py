"""Central-difference verification of the reverse-mode gradients.

Each case owns a deterministic builder: given the parameter tensors it
reruns the forward pass from scratch (re-seeding any internal randomness),
so perturbing one entry and rebuilding gives a clean two-sided difference
quotient.  Errors are reported per tensor as a sup-norm relative error

    rel = max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6)

which stays meaningful when a gradient is legitimately tiny.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward

__all__ = [
    "check_gradients",
    "GradCase",
    "CaseResult",
    "op_cases",
    "model_cases",
    "run_cases",
]

Params = dict[str, Tensor]
Builder = Callable[[Params], Tensor]


def _relative_error(
    build: Builder, params: Params, tensor: Tensor, analytic: np.ndarray, h: float
) -> float:
    numeric = np.zeros(tensor.shape)
    flat = tensor.values.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = build(params).item()
        flat[i] = orig - h
        down = build(params).item()
        flat[i] = orig
        numeric.ravel()[i] = (up - down) / (2.0 * h)
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-6)
    return float(np.abs(analytic - numeric).max() / denom)


def check_gradients(
    build: Builder, params: Params, h: float = 1e-4, tol: float = 1e-4
) -> dict[str, float]:
    """Compare tape gradients of build(params) against central differences.

    Returns the per-tensor relative error; raises AssertionError listing the
    offending tensors if any error reaches tol.  A quotient whose interval
    spans a relu-family kink is not a derivative estimate, so a tensor that
    fails at h is retried once at h/10: the artifact shrinks with the
    interval while a genuine gradient bug is step-size independent.
    """
    for t in params.values():
        t.zero_grad()
    with Tape() as tape:
        loss = build(params)
    backward(tape, loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape))
        for name, t in params.items()
        if t.requires_grad
    }

    errors: dict[str, float] = {}
    for name, t in params.items():
        if not t.requires_grad:
            continue
        err = _relative_error(build, params, t, analytic[name], h)
        if err >= tol:
            err = min(err, _relative_error(build, params, t, analytic[name], h / 10.0))
        errors[name] = err

    bad = {name: err for name, err in errors.items() if err >= tol}
    if bad:
        detail = ", ".join(f"{name}: {err:.3e}" for name, err in sorted(bad.items()))
        raise AssertionError(f"gradient check failed (tol {tol:g}): {detail}")
    return errors


@dataclass(frozen=True)
class GradCase:
    """A named deterministic gradient check: make(seed) -> (params, builder)."""

    name: str
    make: Callable[[int], tuple[Params, Builder]]


@dataclass(frozen=True)
class CaseResult:
    name: str
    seeds: int
    max_error: float
    passed: bool


def run_cases(
    cases: list[GradCase],
    seeds: range = range(10),
    h: float = 1e-4,
    tol: float = 1e-4,
) -> list[CaseResult]:
    results = []
    for case in cases:
        worst = 0.0
        ok = True
        for seed in seeds:
            params, build = case.make(seed)
            try:
                errors = check_gradients(build, params, h=h, tol=tol)
                worst = max(worst, max(errors.values(), default=0.0))
            except AssertionError:
                ok = False
                worst = float("inf")
                break
        results.append(CaseResult(case.name, len(seeds), worst, ok))
    return results


# ---------------------------------------------------------------------------
# per-op cases
# ---------------------------------------------------------------------------


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _away_from_zero(arr: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Shift entries off the origin so kinked ops never straddle it under h."""
    return arr + margin * np.where(arr >= 0.0, 1.0, -1.0)


def _mix(out: Tensor, probe: np.ndarray) -> Tensor:
    """Reduce to a scalar through a fixed probe so every entry matters."""
    return ad.mean_reduce(ad.mul(out, Tensor(probe)))


def _segments(rng: np.random.Generator, rows: int, num: int) -> np.ndarray:
    base = np.arange(num)
    extra = rng.integers(0, num, size=rows - num)
    return np.sort(np.concatenate([base, extra]))


def op_cases() -> list[GradCase]:
    """One deterministic case per differentiable primitive."""

    def matmul_case(seed):
        rng = _rng(seed)
        params = {
            "a": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
            "b": Tensor(rng.standard_normal((3, 5)), requires_grad=True),
        }
        probe = rng.standard_normal((4, 5))
        return params, lambda p: _mix(ad.matmul(p["a"], p["b"]), probe)

    def add_case(seed):
        rng = _rng(seed)
        params = {
            "a": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
            "b": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
        }
        probe = rng.standard_normal((4, 3))
        return params, lambda p: _mix(ad.add(p["a"], p["b"]), probe)

    def add_bias_case(seed):
        rng = _rng(seed)
        params = {
            "x": Tensor(rng.standard_normal((5, 3)), requires_grad=True),
            "b": Tensor(rng.standard_normal((1, 3)), requires_grad=True),
        }
        probe = rng.standard_normal((5, 3))
        return params, lambda p: _mix(ad.add_bias(p["x"], p["b"]), probe)

    def concat_case(seed):
        rng = _rng(seed)
        params = {
            "a": Tensor(rng.standard_normal((4, 2)), requires_grad=True),
            "b": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
        }
        probe = rng.standard_normal((4, 5))
        return params, lambda p: _mix(ad.concat_cols(p["a"], p["b"]), probe)

    def relu_case(seed):
        rng = _rng(seed)
        params = {
            "x": Tensor(_away_from_zero(rng.standard_normal((5, 4))), requires_grad=True)
        }
        probe = rng.standard_normal((5, 4))
        return params, lambda p: _mix(ad.relu(p["x"]), probe)

    def leaky_relu_case(seed):
        rng = _rng(seed)
        params = {
            "x": Tensor(_away_from_zero(rng.standard_normal((5, 4))), requires_grad=True)
        }
        probe = rng.standard_normal((5, 4))
        return params, lambda p: _mix(ad.leaky_relu(p["x"], 0.2), probe)

    def sigmoid_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((5, 4)) * 2.0, requires_grad=True)}
        probe = rng.standard_normal((5, 4))
        return params, lambda p: _mix(ad.sigmoid(p["x"]), probe)

    def exp_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((4, 4)), requires_grad=True)}
        probe = rng.standard_normal((4, 4))
        return params, lambda p: _mix(ad.exp(p["x"]), probe)

    def log_case(seed):
        rng = _rng(seed)
        params = {
            "x": Tensor(np.abs(rng.standard_normal((4, 4))) + 0.5, requires_grad=True)
        }
        probe = rng.standard_normal((4, 4))
        return params, lambda p: _mix(ad.log(p["x"]), probe)

    def softplus_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((5, 4)) * 3.0, requires_grad=True)}
        probe = rng.standard_normal((5, 4))
        return params, lambda p: _mix(ad.softplus(p["x"]), probe)

    def mul_case(seed):
        rng = _rng(seed)
        params = {
            "a": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
            "b": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
        }
        probe = rng.standard_normal((4, 3))
        return params, lambda p: _mix(ad.mul(p["a"], p["b"]), probe)

    def scale_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((4, 3)), requires_grad=True)}
        probe = rng.standard_normal((4, 3))
        return params, lambda p: _mix(ad.scale(p["x"], -1.7), probe)

    def div_case(seed):
        rng = _rng(seed)
        params = {
            "a": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
            "b": Tensor(np.abs(rng.standard_normal((4, 3))) + 1.0, requires_grad=True),
        }
        probe = rng.standard_normal((4, 3))
        return params, lambda p: _mix(ad.div(p["a"], p["b"]), probe)

    def scale_rows_case(seed):
        rng = _rng(seed)
        params = {
            "x": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
            "s": Tensor(rng.standard_normal((4, 1)), requires_grad=True),
        }
        probe = rng.standard_normal((4, 3))
        return params, lambda p: _mix(ad.scale_rows(p["x"], p["s"]), probe)

    def rowsum_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((5, 4)), requires_grad=True)}
        probe = rng.standard_normal((5, 1))
        return params, lambda p: _mix(ad.rowsum(p["x"]), probe)

    def mean_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((5, 4)), requires_grad=True)}
        return params, lambda p: ad.mean_reduce(ad.mul(p["x"], p["x"]))

    def gather_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((5, 3)), requires_grad=True)}
        index = rng.integers(0, 5, size=8)
        probe = rng.standard_normal((8, 3))
        return params, lambda p: _mix(ad.row_gather(p["x"], index), probe)

    def seg_wsum_case(seed):
        rng = _rng(seed)
        segments = _segments(rng, rows=7, num=3)
        params = {
            "x": Tensor(rng.standard_normal((7, 3)), requires_grad=True),
            "w": Tensor(rng.standard_normal((7, 1)), requires_grad=True),
        }
        probe = rng.standard_normal((3, 3))
        return params, lambda p: _mix(
            ad.segment_weighted_sum(p["x"], p["w"], segments, 3), probe
        )

    def seg_softmax_case(seed):
        rng = _rng(seed)
        segments = _segments(rng, rows=8, num=3)
        params = {"x": Tensor(rng.standard_normal((8, 1)) * 2.0, requires_grad=True)}
        probe = rng.standard_normal((8, 1))
        return params, lambda p: _mix(ad.segment_softmax(p["x"], segments, 3), probe)

    def seg_lse_case(seed):
        rng = _rng(seed)
        segments = _segments(rng, rows=8, num=3)
        params = {"x": Tensor(rng.standard_normal((8, 1)) * 2.0, requires_grad=True)}
        probe = rng.standard_normal((3, 1))
        return params, lambda p: _mix(ad.segment_logsumexp(p["x"], segments, 3), probe)

    def dropout_case(seed):
        rng = _rng(seed)
        params = {"x": Tensor(rng.standard_normal((6, 4)), requires_grad=True)}
        probe = rng.standard_normal((6, 4))

        def build(p):
            # fresh generator per evaluation keeps the mask identical
            drop_rng = np.random.default_rng(seed + 1)
            return _mix(ad.dropout(p["x"], 0.3, True, drop_rng), probe)

        return params, build

    return [
        GradCase("matmul", matmul_case),
        GradCase("add", add_case),
        GradCase("add_bias", add_bias_case),
        GradCase("concat_cols", concat_case),
        GradCase("relu", relu_case),
        GradCase("leaky_relu", leaky_relu_case),
        GradCase("sigmoid", sigmoid_case),
        GradCase("exp", exp_case),
        GradCase("log", log_case),
        GradCase("softplus", softplus_case),
        GradCase("mul", mul_case),
        GradCase("scale", scale_case),
        GradCase("div", div_case),
        GradCase("scale_rows", scale_rows_case),
        GradCase("rowsum", rowsum_case),
        GradCase("mean_reduce", mean_case),
        GradCase("row_gather", gather_case),
        GradCase("segment_weighted_sum", seg_wsum_case),
        GradCase("segment_softmax", seg_softmax_case),
        GradCase("segment_logsumexp", seg_lse_case),
        GradCase("dropout", dropout_case),
    ]


# ---------------------------------------------------------------------------
# end-to-end model cases
# ---------------------------------------------------------------------------


def _tiny_batch(rng: np.random.Generator, input_dim: int):
    """A hand-built two-egonet batch exercising all three position roles."""
    from .egonet import POS_ANCHOR, POS_GRANDPARENT, POS_SIBLING, EgonetBatch

    # egonet 0: anchor + grandparent + two siblings; egonet 1: bare anchor
    positions = np.array(
        [POS_ANCHOR, POS_GRANDPARENT, POS_SIBLING, POS_SIBLING, POS_ANCHOR]
    )
    egonet_index = np.array([0, 0, 0, 0, 1])
    anchor_rows = np.array([0, 4])
    agg_dst = np.array([0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4])
    agg_src = np.array([0, 1, 2, 3, 1, 0, 2, 0, 3, 0, 4])
    degree = np.bincount(agg_dst, minlength=5)
    coeff = (1.0 / np.sqrt(degree[agg_dst] * degree[agg_src]))[:, None]
    return EgonetBatch(
        features=rng.standard_normal((5, input_dim)),
        positions=positions,
        egonet_index=egonet_index,
        anchor_rows=anchor_rows,
        agg_dst=agg_dst,
        agg_src=agg_src,
        gcn_coeff=coeff,
    )


def model_cases() -> list[GradCase]:
    """Whole-network checks: every architecture, readout, matcher, and loss."""
    from .model import ModelConfig, bce_loss, info_nce_loss, init_params, pair_logits

    input_dim = 5
    combos = [
        ("gcn", "mean", "mlp", "nce"),
        ("gat", "mean", "bilinear", "nce"),
        ("pgcn", "weighted", "mlp", "bce"),
        ("pgat", "concat", "bilinear", "nce"),
        ("pgat", "weighted", "mlp", "bce"),
    ]

    def make_factory(arch, readout, matcher, loss_kind):
        def make(seed):
            rng = _rng(seed)
            config = ModelConfig(
                arch=arch,
                input_dim=input_dim,
                hidden_dims=(3, 4),
                heads=(2, 1) if arch in ("gat", "pgat") else (1, 1),
                position_dim=2 if arch in ("pgcn", "pgat") else 0,
                readout=readout,
                matcher=matcher,
                matcher_hidden=3,
                dropout=0.25,
            )
            params = init_params(config, rng)
            # perturb zero-initialised tensors so their gradients are generic
            for t in params.values():
                t.values += 0.1 * rng.standard_normal(t.shape)
            batch = _tiny_batch(rng, input_dim)
            queries = Tensor(rng.standard_normal((4, input_dim)))
            pair_anchor = np.array([0, 1, 0, 1])
            groups = np.array([0, 0, 1, 1])
            labels = np.array([[1.0], [0.0], [1.0], [0.0]])
            positive_rows = np.array([0, 2])

            def build(p):
                drop_rng = np.random.default_rng(seed + 17)
                logits = pair_logits(
                    p, config, batch, queries, pair_anchor,
                    training=True, rng=drop_rng,
                )
                if loss_kind == "nce":
                    return info_nce_loss(logits, groups, positive_rows, 2)
                return bce_loss(logits, labels)

            return params, build

        return make

    return [
        GradCase(
            f"model[{arch}/{readout}/{matcher}/{loss_kind}]",
            make_factory(arch, readout, matcher, loss_kind),
        )
        for arch, readout, matcher, loss_kind in combos
    ]
