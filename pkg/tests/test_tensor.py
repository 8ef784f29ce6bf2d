import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tdm import tensor as tn
from tdm.gradcheck import check_function, numeric_grad, op_suite, relative_error
from tdm.tensor import ShapeError, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal((a @ Tensor(np.eye(2))).data, [[1, 2], [3, 4]])

    def test_annihilating(self):
        out = Tensor([[1.0, 0.0], [0.0, 0.0]]) @ Tensor([[0.0], [5.0]])
        np.testing.assert_array_equal(out.data, [[0.0], [0.0]])

    def test_grad_of_sum_is_ones_times_b_transpose(self, rng):
        a_arr, b_arr = rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 5))
        a = leaf(a_arr)
        tn.sum(a @ Tensor(b_arr)).backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 5)) @ b_arr.T, rtol=1e-12)

        def f():
            return float(np.sum(a_arr @ b_arr))

        for idx in np.ndindex(a_arr.shape):
            num = numeric_grad(f, a_arr, idx, h=1e-6)
            assert relative_error(a.grad[idx], num) < 1e-4

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(tn.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = tn.softmax(Tensor([1e4, 1e4 - 1000])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_neg_inf_gets_exact_zero(self):
        out = tn.softmax(Tensor([1.0, -np.inf, 2.0])).data
        assert out[1] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                      elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        out = tn.softmax(Tensor(x), axis=-1).data
        assert np.all(out > 0) or np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12, rtol=0)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            tn.softmax(Tensor(np.ones((2, 2))), axis=3)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = tn.layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])

    def test_already_normalized(self):
        out = tn.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        expected = 1.0 / np.sqrt(1.0 + 1e-5)  # mean 0, variance 1
        np.testing.assert_allclose(out, [expected, -expected], rtol=1e-15)
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-5)


class TestElementwise:
    def test_relu(self):
        assert tn.relu(Tensor(-3.0)).item() == 0.0

    def test_mean(self):
        assert tn.mean(Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_square_derivative(self):
        x = leaf(3.0)
        tn.square(x).backward()
        assert x.grad == 6.0

    def test_abs_subgradient_zero(self):
        x = leaf([0.0, -2.0, 2.0])
        tn.sum(tn.abs(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_row_bias_gradient_sums_rows(self):
        b = leaf([1.0, 2.0])
        tn.sum(Tensor(np.ones((3, 2))) + b).backward()
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_broadcast_beyond_row_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((3, 2))) + Tensor(np.ones((3, 1)))
        with pytest.raises(ShapeError):
            Tensor(np.ones((3, 2))) * Tensor(np.ones(2))

    def test_concat_and_reshape(self):
        out = tn.concat([Tensor(np.zeros((2, 1))), Tensor(np.ones((2, 2)))], axis=1)
        assert out.shape == (2, 3)
        assert tn.reshape(out, (3, 2)).shape == (3, 2)
        with pytest.raises(ShapeError):
            tn.reshape(out, (4, 2))

    def test_embedding_lookup_accumulates_repeats(self):
        table = leaf(np.arange(6.0).reshape(3, 2))
        out = tn.embedding_lookup(table, [2, 2, 0])
        np.testing.assert_array_equal(out.data, [[4, 5], [4, 5], [0, 1]])
        tn.sum(out).backward()
        np.testing.assert_array_equal(table.grad, [[1, 1], [0, 0], [2, 2]])
        with pytest.raises(IndexError):
            tn.embedding_lookup(table, [3])

    def test_normalize_zero_vector(self):
        out = tn.normalize(Tensor([[0.0, 0.0, 0.0], [0.0, 3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0, 0, 0], [0, 0.6, 0.8]])


class TestBackward:
    def test_sum(self):
        x = leaf(np.zeros(4))
        tn.sum(x).backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1, 1])

    def test_sum_of_squares(self, rng):
        arr = rng.uniform(-2, 2, 5)
        x = leaf(arr)
        tn.sum(x * x).backward()
        np.testing.assert_allclose(x.grad, 2 * arr)

    def test_fan_out_sums_paths(self):
        x = leaf([1.5, -2.0])
        y = tn.scale(x, 3.0)
        loss = tn.sum(y * y) + tn.sum(tn.scale(y, 2.0))  # y consumed twice
        loss.backward()
        # d/dx [9x^2 + 6x] = 18x + 6
        np.testing.assert_allclose(x.grad, 18 * np.array([1.5, -2.0]) + 6)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_no_grad_builds_no_graph(self):
        x = leaf([1.0])
        with tn.no_grad():
            y = x * 2.0
        assert y.ctx is None and not y.requires_grad

    def test_deep_graph_no_recursion_limit(self):
        x = leaf(1.0)
        y = x
        for _ in range(5000):
            y = y + 1.0
        y.backward()
        assert x.grad == 1.0


@pytest.mark.parametrize("case", op_suite(np.random.default_rng(7)), ids=lambda c: c[0])
def test_op_gradients_match_finite_differences(case):
    name, fn, inputs = case
    result = check_function(name, fn, inputs, np.random.default_rng(11))
    assert result.max_rel_error < 1e-4, result
