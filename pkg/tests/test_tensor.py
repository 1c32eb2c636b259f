import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from cnesue.errors import ConfigError, DimensionError, EmptyAttentionError
from cnesue.tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_bias,
    concat,
    dropout,
    elementwise,
    embedding,
    expand,
    getitem,
    linear,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_masked,
    split,
    stack,
    sub,
    sum_,
    swapaxes,
    take_rows,
    tanh,
    transpose,
)

from _util import analytic_grads, assert_grads_match

rng = np.random.default_rng(0)


class TestElementwise:
    def test_add_sub_mul_values(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, -1.0])
        np.testing.assert_array_equal(add(a, b).data, [4.0, 1.0])
        np.testing.assert_array_equal(sub(a, b).data, [-2.0, 3.0])
        np.testing.assert_array_equal(mul(a, b).data, [3.0, -2.0])

    def test_operators_and_scalars(self):
        a = Tensor([1.0, 2.0])
        np.testing.assert_array_equal((a + 1).data, [2.0, 3.0])
        np.testing.assert_array_equal((2 * a).data, [2.0, 4.0])
        np.testing.assert_array_equal((1 - a).data, [0.0, -1.0])
        np.testing.assert_array_equal((-a).data, [-1.0, -2.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2,\).*\(3,\)"):
            add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_sigmoid_extremes_are_finite(self):
        y = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_allclose(y, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(y))

    def test_relu_and_tanh(self):
        x = Tensor([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu(x).data, [0.0, 0.0, 2.0])
        np.testing.assert_allclose(tanh(x).data, np.tanh([-1.0, 0.0, 2.0]))

    def test_dispatch(self):
        x = Tensor([0.3])
        assert elementwise("sigmoid", x).item() == pytest.approx(1 / (1 + math.exp(-0.3)))
        with pytest.raises(ValueError):
            elementwise("cosh", x)

    def test_elementwise_gradients(self):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert_grads_match(lambda x, y: sum_(mul(sigmoid(x), tanh(y))), [a, b])
        assert_grads_match(lambda x, y: sum_(mul(sub(x, y), add(x, y))), [a, b])
        assert_grads_match(lambda x: sum_(mul(relu(x), x)), [a + 0.05 * np.sign(a)])

    def test_add_bias_gradient(self):
        assert_grads_match(lambda x, b: sum_(mul(add_bias(x, b), x)), [rng.normal(size=(2, 3, 4)), rng.normal(size=4)])


class TestLinearAlgebra:
    def test_matmul_2d(self):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)

    def test_matmul_shared_right_operand(self):
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        assert matmul(Tensor(a), Tensor(b)).shape == (2, 3, 5)
        assert_grads_match(lambda x, y: sum_(mul(matmul(x, y), matmul(x, y))), [a, b])

    def test_matmul_batched(self):
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)
        assert_grads_match(lambda x, y: sum_(tanh(matmul(x, y))), [a, b])

    def test_matmul_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(5, 2\)"):
            matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))

    def test_linear_matches_numpy(self):
        x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)
        np.testing.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w.T + b)
        assert_grads_match(lambda x_, w_, b_: sum_(tanh(linear(x_, w_, b_))), [x, w, b])


class TestShapes:
    def test_reshape_transpose_swapaxes(self):
        a = rng.normal(size=(2, 3, 4))
        assert_grads_match(lambda x: sum_(mul(reshape(x, (6, 4)), reshape(x, (6, 4)))), [a])
        assert_grads_match(lambda x: sum_(tanh(transpose(x, (2, 0, 1)))), [a])
        np.testing.assert_array_equal(swapaxes(Tensor(a), 0, 2).data, np.swapaxes(a, 0, 2))

    def test_expand(self):
        a = rng.normal(size=(2, 3))
        assert expand(Tensor(a), 1, 4).shape == (2, 4, 3)
        assert_grads_match(lambda x: sum_(tanh(expand(x, 1, 4))), [a])

    def test_sum_axis(self):
        a = rng.normal(size=(2, 3))
        np.testing.assert_allclose(sum_(Tensor(a), axis=1).data, a.sum(axis=1))
        assert_grads_match(lambda x: sum_(tanh(sum_(x, axis=0, keepdims=True))), [a])

    def test_getitem_and_take_rows(self):
        a = rng.normal(size=(5, 3))
        assert_grads_match(lambda x: sum_(tanh(getitem(x, slice(1, 4)))), [a])
        assert_grads_match(lambda x: sum_(tanh(take_rows(x, [0, 2, 2, 4]))), [a])

    def test_take_rows_repeated_accumulates(self):
        _, (g,) = analytic_grads(lambda x: sum_(take_rows(x, [1, 1, 1])), [np.zeros((3, 2))])
        np.testing.assert_array_equal(g, [[0, 0], [3, 3], [0, 0]])

    def test_concat_split_round_trip(self):
        parts = [rng.normal(size=(2, k)) for k in (1, 3, 2)]
        joined = concat([Tensor(p) for p in parts], axis=1)
        back = split(joined, [1, 3, 2], axis=1)
        for p, b in zip(parts, back):
            np.testing.assert_array_equal(p, b.data)

    def test_concat_gradient(self):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
        assert_grads_match(lambda x, y: sum_(tanh(concat([x, y], axis=0))), [a, b])

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    def test_split_bad_sizes(self):
        with pytest.raises(DimensionError):
            split(Tensor(np.zeros((2, 5))), [2, 2], axis=1)

    def test_stack_gradient(self):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert stack([Tensor(a), Tensor(b)]).shape == (2, 3)
        assert_grads_match(lambda x, y: sum_(tanh(stack([x, y], axis=1))), [a, b])


class TestEmbedding:
    def test_lookup_and_pad_row_gets_no_gradient(self):
        table = rng.normal(size=(5, 3))
        ids = np.array([[0, 2, 2], [4, 0, 1]])
        t = Tensor(table, requires_grad=True)
        with Tape() as tape:
            out = embedding(t, ids)
            loss = sum_(out)
        np.testing.assert_array_equal(out.data, table[ids])
        tape.backward(loss)
        np.testing.assert_array_equal(t.grad[0], 0.0)
        np.testing.assert_array_equal(t.grad[2], 2.0)
        np.testing.assert_array_equal(t.grad[3], 0.0)


class TestSoftmaxMasked:
    @given(
        hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=st.floats(-30, 30)),
        st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_normalised_with_exact_zeros(self, logits, data):
        mask = data.draw(hnp.arrays(bool, logits.shape))
        mask[:, 0] = True
        y = softmax_masked(Tensor(logits), mask).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(y[~mask] == 0.0)
        assert np.all(y >= 0)

    def test_all_masked_raises(self):
        with pytest.raises(EmptyAttentionError):
            softmax_masked(Tensor(np.zeros((2, 3))), np.array([[True, False, False], [False, False, False]]))

    def test_large_logits_stable(self):
        y = softmax_masked(Tensor(np.array([1000.0, 1000.0, -1000.0]))).data
        np.testing.assert_allclose(y, [0.5, 0.5, 0.0])

    def test_gradient_masked(self):
        mask = np.array([[True, False, True, True], [False, True, True, False]])
        w = rng.normal(size=(2, 4))
        assert_grads_match(lambda x: sum_(mul(softmax_masked(x, mask), Tensor(w))), [rng.normal(size=(2, 4))])

    def test_masked_logits_get_zero_gradient(self):
        mask = np.array([True, False, True])
        _, (g,) = analytic_grads(lambda x: sum_(mul(softmax_masked(x, mask), Tensor([1.0, 2.0, 3.0]))), [np.zeros(3)])
        assert g[1] == 0.0


class TestDropout:
    def test_identity_when_not_training(self):
        x = Tensor(np.ones(5))
        assert dropout(x, 0.5, training=False) is x
        assert dropout(x, 0.0, training=True, rng=rng) is x

    def test_rate_validation(self):
        with pytest.raises(ConfigError):
            dropout(Tensor(np.ones(2)), 1.0, True, rng)
        with pytest.raises(ConfigError):
            dropout(Tensor(np.ones(2)), -0.1, True, rng)

    def test_expectation_preserved(self):
        # Law of large numbers: the mean of inverted dropout on ones stays near 1.
        y = dropout(Tensor(np.ones(200_000)), 0.2, True, np.random.default_rng(1)).data
        assert abs(y.mean() - 1.0) < 0.01
        assert abs((y == 0).mean() - 0.2) < 0.01

    def test_gradient_uses_same_mask(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        with Tape() as tape:
            y = dropout(x, 0.5, True, np.random.default_rng(2))
            loss = sum_(y)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, y.data)


class TestTape:
    def test_no_grad_records_nothing(self):
        with Tape() as tape:
            with no_grad():
                y = mul(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0 and y.node is None

    def test_shared_subexpression_accumulates(self):
        # d/dx (x*x + x) = 2x + 1
        _, (g,) = analytic_grads(lambda x: sum_(add(mul(x, x), x)), [np.array([3.0])])
        np.testing.assert_allclose(g, [7.0])

    def test_backward_rejects_foreign_loss(self):
        loss = sum_(Tensor([1.0]))
        with Tape() as tape:
            pass
        with pytest.raises(ValueError):
            tape.backward(loss)

    def test_non_scalar_needs_grad(self):
        with Tape() as tape:
            y = scale(Tensor(np.ones(3), requires_grad=True), 2.0)
        with pytest.raises(DimensionError):
            tape.backward(y)

    def test_tapes_are_thread_local(self):
        seen = []
        with Tape():
            t = threading.Thread(target=lambda: seen.append(active_tape()))
            t.start()
            t.join()
        assert seen == [None]
