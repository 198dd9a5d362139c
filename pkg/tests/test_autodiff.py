"""Unit tests for the reverse-mode engine.

Hand-derived gradients freeze the contract for a few tiny programs; the
finite-difference suite in taxograft.gradcheck then covers every primitive
with random instances.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taxograft import autodiff as ad
from taxograft.autodiff import Tape, Tensor, backward
from taxograft.gradcheck import check_gradients, op_cases


class TestTensor:
    def test_promotes_to_2d_float64(self):
        t = Tensor([1, 2, 3])
        assert t.values.shape == (1, 3)
        assert t.values.dtype == np.float64

    def test_rejects_3d(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 2, 2)))

    def test_item_requires_scalar(self):
        with pytest.raises(ValueError):
            Tensor([[1.0, 2.0]]).item()
        assert Tensor([[4.25]]).item() == 4.25


class TestTapeMechanics:
    def test_no_tape_records_nothing(self):
        x = Tensor([[1.0, -2.0]], requires_grad=True)
        y = ad.relu(x)
        assert y.grad is None and x.grad is None
        assert np.array_equal(y.values, [[1.0, 0.0]])

    def test_constant_inputs_not_recorded(self):
        x = Tensor([[1.0, 2.0]])
        with Tape() as tape:
            ad.relu(x)
        assert len(tape) == 0

    def test_backward_requires_scalar(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            y = ad.relu(x)
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_fanout_accumulates(self):
        x = Tensor([[3.0]], requires_grad=True)
        with Tape() as tape:
            loss = ad.mean_reduce(ad.mul(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[6.0]])

    def test_add_same_tensor_twice(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            loss = ad.mean_reduce(ad.add(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[1.0, 1.0]])

    def test_nested_tapes_record_to_innermost(self):
        x = Tensor([[2.0]], requires_grad=True)
        with Tape() as outer:
            _ = ad.scale(x, 3.0)
            with Tape() as inner:
                loss = ad.mean_reduce(ad.mul(x, x))
            backward(inner, loss)
        assert len(outer) == 1
        assert len(inner) == 2
        np.testing.assert_allclose(x.grad, [[4.0]])

    def test_unused_branch_contributes_nothing(self):
        x = Tensor([[1.0]], requires_grad=True)
        with Tape() as tape:
            _ = ad.exp(x)
            loss = ad.mean_reduce(ad.scale(x, 2.0))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[2.0]])


class TestFrozenGradients:
    def test_matmul_mean(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        b = Tensor([[5.0, 6.0], [7.0, 8.0]], requires_grad=True)
        with Tape() as tape:
            loss = ad.mean_reduce(ad.matmul(a, b))
        backward(tape, loss)
        np.testing.assert_allclose(a.grad, np.array([[11.0, 15.0], [11.0, 15.0]]) / 4)
        np.testing.assert_allclose(b.grad, np.array([[4.0, 4.0], [6.0, 6.0]]) / 4)

    def test_relu_subgradient_at_zero_is_one(self):
        x = Tensor([[-1.0, 0.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            loss = ad.mean_reduce(ad.relu(x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[0.0, 1 / 3, 1 / 3]])

    def test_leaky_relu_values_and_grad(self):
        x = Tensor([[-10.0, 5.0]], requires_grad=True)
        with Tape() as tape:
            y = ad.leaky_relu(x, 0.2)
            loss = ad.mean_reduce(y)
        backward(tape, loss)
        np.testing.assert_allclose(y.values, [[-2.0, 5.0]])
        np.testing.assert_allclose(x.grad, [[0.1, 0.5]])

    def test_segment_softmax_known_probs(self):
        logits = Tensor([[0.0], [np.log(3.0)], [0.0]])
        probs = ad.segment_softmax(logits, np.array([0, 0, 1]), 2)
        np.testing.assert_allclose(probs.values, [[0.25], [0.75], [1.0]])

    def test_segment_logsumexp_matches_direct(self):
        logits = Tensor([[1.0], [2.0], [-1.0]])
        out = ad.segment_logsumexp(logits, np.array([0, 0, 1]), 2)
        np.testing.assert_allclose(
            out.values, [[np.log(np.exp(1) + np.exp(2))], [-1.0]]
        )

    def test_row_gather_scatter_adds(self):
        x = Tensor([[1.0], [2.0]], requires_grad=True)
        with Tape() as tape:
            picked = ad.row_gather(x, np.array([0, 0, 1]))
            loss = ad.mean_reduce(picked)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[2 / 3], [1 / 3]])

    def test_segment_weighted_sum_values(self):
        x = Tensor([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        w = Tensor([[2.0], [3.0], [0.5]])
        out = ad.segment_weighted_sum(x, w, np.array([0, 0, 1]), 2)
        np.testing.assert_allclose(out.values, [[2.0, 3.0], [1.0, 1.0]])


class TestNumericalStability:
    def test_sigmoid_extremes(self):
        y = ad.sigmoid(Tensor([[-1000.0, 1000.0]]))
        assert np.all(np.isfinite(y.values))
        np.testing.assert_allclose(y.values, [[0.0, 1.0]], atol=1e-12)

    def test_softplus_extremes(self):
        y = ad.softplus(Tensor([[-1000.0, 1000.0]]))
        np.testing.assert_allclose(y.values, [[0.0, 1000.0]], atol=1e-12)

    def test_segment_softmax_huge_logits(self):
        logits = Tensor([[1000.0], [1000.0], [-1000.0]])
        probs = ad.segment_softmax(logits, np.array([0, 0, 0]), 1)
        assert np.all(np.isfinite(probs.values))
        np.testing.assert_allclose(probs.values[:2], [[0.5], [0.5]], atol=1e-12)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ad.log(Tensor([[0.0]]))

    def test_empty_segment_rejected(self):
        with pytest.raises(ValueError):
            ad.segment_softmax(Tensor([[1.0]]), np.array([0]), 2)


class TestDropout:
    def test_identity_when_eval(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        assert ad.dropout(x, 0.5, False, None) is x
        assert ad.dropout(x, 0.0, True, None) is x

    def test_preserves_expectation(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((200, 200)))
        y = ad.dropout(x, 0.3, True, rng)
        kept = y.values[y.values > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.7)
        assert abs(y.values.mean() - 1.0) < 0.02

    def test_mask_is_deterministic_per_seed(self):
        x = Tensor(np.ones((8, 8)))
        a = ad.dropout(x, 0.5, True, np.random.default_rng(7)).values
        b = ad.dropout(x, 0.5, True, np.random.default_rng(7)).values
        np.testing.assert_array_equal(a, b)

    def test_rate_validated(self):
        x = Tensor([[1.0]])
        with pytest.raises(Exception):
            ad.dropout(x, 1.0, True, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_segment_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(3, 12))
    num = int(rng.integers(1, 4))
    segments = np.sort(
        np.concatenate([np.arange(num), rng.integers(0, num, size=rows - num)])
    )
    probs = ad.segment_softmax(
        Tensor(rng.standard_normal((rows, 1)) * 5.0), segments, num
    )
    sums = np.zeros(num)
    np.add.at(sums, segments, probs.values[:, 0])
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_exp_of_logsumexp_equals_sum_of_exp(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((6, 1)) * 3.0
    segments = np.array([0, 0, 0, 1, 1, 1])
    out = ad.segment_logsumexp(Tensor(logits), segments, 2)
    expected = [np.log(np.exp(logits[:3, 0]).sum()), np.log(np.exp(logits[3:, 0]).sum())]
    np.testing.assert_allclose(out.values[:, 0], expected, rtol=1e-12)


@pytest.mark.parametrize("case", op_cases(), ids=lambda c: c.name)
def test_fd_gradients_per_op(case):
    """Central differences agree with the tape for every primitive."""
    for seed in range(3):
        params, build = case.make(seed)
        check_gradients(build, params, h=1e-4, tol=1e-4)
