"""Minimal dense reverse-mode automatic differentiation.

All values are float64 matrices of shape ``(rows, cols)``.  While a
:class:`Tape` is active, every op that touches a gradient-carrying tensor
records a backward closure; :func:`backward` replays the tape in reverse and
accumulates ``d loss / d tensor`` into ``tensor.grad``, additively across
fan-out.  With no active tape the ops are plain numpy and carry no overhead,
which is the inference path.

The op set is deliberately small: exactly what a two-layer message-passing
network with segment attention, position-aware readouts, and two matching
heads needs.  Each differentiable op is covered by the central
finite-difference suite in :mod:`taxograft.gradcheck`.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "add_bias",
    "concat_cols",
    "relu",
    "leaky_relu",
    "sigmoid",
    "exp",
    "log",
    "softplus",
    "mul",
    "scale",
    "div",
    "scale_rows",
    "rowsum",
    "mean_reduce",
    "row_gather",
    "segment_weighted_sum",
    "segment_softmax",
    "segment_logsumexp",
    "dropout",
]


class Tensor:
    """A dense (rows, cols) float64 matrix with an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Execution-ordered record of ops, replayed in reverse by backward().

    Creation order is topological by construction: an op's inputs always
    exist before its output.  Use as a context manager; tapes nest, and the
    innermost active tape receives the recordings of the current thread.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)


_LOCAL = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _make(values: np.ndarray, backward_fn, *inputs: Tensor) -> Tensor:
    """Wrap a forward result, recording backward_fn if anything needs grads.

    backward_fn receives the output gradient and must accumulate into the
    inputs via _accumulate without mutating the array it was given.
    """
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append((out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad of every gradient-carrying tensor reachable from loss."""
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be a (1, 1) scalar tensor, got {loss.shape}")
    loss.grad = np.ones((1, 1))
    for out, backward_fn in reversed(tape._nodes):
        if out.grad is not None:
            backward_fn(out.grad)


# ---------------------------------------------------------------------------
# dense primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        _accumulate(a, g @ bv.T)
        _accumulate(b, av.T @ g)

    return _make(av @ bv, bw, a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.values + b.values, bw, a, b)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a (1, cols) row vector to every row of x."""
    if bias.shape != (1, x.shape[1]):
        raise ValueError(f"bias shape {bias.shape} does not broadcast over {x.shape}")

    def bw(g):
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=0, keepdims=True))

    return _make(x.values + bias.values, bw, x, bias)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    na = a.shape[1]

    def bw(g):
        _accumulate(a, g[:, :na])
        _accumulate(b, g[:, na:])

    return _make(np.hstack([a.values, b.values]), bw, a, b)


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is the positive-side slope (1)
    mask = x.values >= 0.0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.values, 0.0), bw, x)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    mask = x.values >= 0.0
    deriv = np.where(mask, 1.0, slope)

    def bw(g):
        _accumulate(x, g * deriv)

    return _make(np.where(mask, x.values, slope * x.values), bw, x)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def bw(g):
        _accumulate(x, g * out * (1.0 - out))

    return _make(out, bw, x)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)

    def bw(g):
        _accumulate(x, g * out)

    return _make(out, bw, x)


def log(x: Tensor) -> Tensor:
    if np.any(x.values <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    v = x.values

    def bw(g):
        _accumulate(x, g / v)

    return _make(np.log(v), bw, x)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    out = np.logaddexp(0.0, x.values)
    v = x.values

    def bw(g):
        sig = np.empty_like(v)
        pos = v >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        sig[~pos] = ev / (1.0 + ev)
        _accumulate(x, g * sig)

    return _make(out, bw, x)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        _accumulate(a, g * bv)
        _accumulate(b, g * av)

    return _make(av * bv, bw, a, b)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accumulate(x, g * c)

    return _make(x.values * c, bw, x)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"div shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        _accumulate(a, g / bv)
        _accumulate(b, -g * av / (bv * bv))

    return _make(av / bv, bw, a, b)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of x by the scalar s[i, 0]."""
    if s.shape != (x.shape[0], 1):
        raise ValueError(f"row scales must be ({x.shape[0]}, 1), got {s.shape}")
    xv, sv = x.values, s.values

    def bw(g):
        _accumulate(x, g * sv)
        _accumulate(s, (g * xv).sum(axis=1, keepdims=True))

    return _make(xv * sv, bw, x, s)


def rowsum(x: Tensor) -> Tensor:
    cols = x.shape[1]

    def bw(g):
        _accumulate(x, np.repeat(g, cols, axis=1))

    return _make(x.values.sum(axis=1, keepdims=True), bw, x)


def mean_reduce(x: Tensor) -> Tensor:
    n = x.values.size
    shape = x.shape

    def bw(g):
        _accumulate(x, np.full(shape, g[0, 0] / n))

    return _make(np.array([[x.values.mean()]]), bw, x)


def row_gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows, with repetition allowed; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise ValueError("row_gather index must be 1-D")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ValueError("row_gather index out of range")
    rows, cols = x.shape

    def bw(g):
        dx = np.zeros((rows, cols))
        np.add.at(dx, index, g)
        _accumulate(x, dx)

    return _make(x.values[index], bw, x)


def _check_segments(segments: np.ndarray, rows: int, num_segments: int) -> np.ndarray:
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape != (rows,):
        raise ValueError(f"segment index must have shape ({rows},)")
    if segments.size and (segments.min() < 0 or segments.max() >= num_segments):
        raise ValueError("segment id out of range")
    return segments


def segment_weighted_sum(
    x: Tensor, weights: Tensor, segments: np.ndarray, num_segments: int
) -> Tensor:
    """out[s] = sum over rows i with segments[i] == s of weights[i] * x[i].

    Differentiable in both x and weights; weights has shape (rows, 1).
    """
    rows, cols = x.shape
    if weights.shape != (rows, 1):
        raise ValueError(f"weights must be ({rows}, 1), got {weights.shape}")
    segments = _check_segments(segments, rows, num_segments)
    xv, wv = x.values, weights.values
    out = np.zeros((num_segments, cols))
    np.add.at(out, segments, wv * xv)

    def bw(g):
        g_rows = g[segments]
        _accumulate(x, g_rows * wv)
        _accumulate(weights, (g_rows * xv).sum(axis=1, keepdims=True))

    return _make(out, bw, x, weights)


def segment_softmax(logits: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax within each segment of a (rows, 1) logit column.

    Uses per-segment max subtraction, so arbitrarily large logits stay
    finite.  Every segment must own at least one row.
    """
    rows = logits.shape[0]
    if logits.shape[1] != 1:
        raise ValueError(f"segment_softmax expects a column, got {logits.shape}")
    segments = _check_segments(segments, rows, num_segments)
    counts = np.bincount(segments, minlength=num_segments)
    if np.any(counts == 0):
        raise ValueError("segment_softmax: empty segment")
    col = logits.values[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, col)
    shifted = np.exp(col - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, shifted)
    probs = (shifted / denom[segments])[:, None]

    def bw(g):
        weighted = np.zeros(num_segments)
        np.add.at(weighted, segments, (g * probs)[:, 0])
        _accumulate(logits, probs * (g - weighted[segments][:, None]))

    return _make(probs, bw, logits)


def segment_logsumexp(logits: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment log(sum(exp(logit))), stable; output shape (num_segments, 1)."""
    rows = logits.shape[0]
    if logits.shape[1] != 1:
        raise ValueError(f"segment_logsumexp expects a column, got {logits.shape}")
    segments = _check_segments(segments, rows, num_segments)
    counts = np.bincount(segments, minlength=num_segments)
    if np.any(counts == 0):
        raise ValueError("segment_logsumexp: empty segment")
    col = logits.values[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, col)
    shifted = np.exp(col - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, shifted)
    out = (seg_max + np.log(denom))[:, None]
    softmax = shifted / denom[segments]

    def bw(g):
        _accumulate(logits, (g[segments, 0] * softmax)[:, None])

    return _make(out, bw, logits)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero entries with probability rate and rescale survivors by 1/(1-rate).

    Identity when not training or rate == 0; then the input tensor is
    returned unchanged and nothing is recorded.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _accumulate(x, g * keep)

    return _make(x.values * keep, bw, x)
