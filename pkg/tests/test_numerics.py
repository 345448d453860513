"""Tensor arithmetic and reverse-mode gradients."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bicat.errors import DimensionError, ProbeError
from bicat.numerics import (Parameter, Tensor, dropout, grad_check, layer_norm, matmul, softmax,
                            softmax_rows, symmetric_kl_from_logits)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _param(rng, *shape, name="p"):
    return Parameter(rng.normal(size=shape), name)


class TestMatmul:
    def test_identity(self):
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), b).data, b.data)

    def test_orthogonal_rows(self):
        np.testing.assert_array_equal(matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).data, [[0.0]])

    @pytest.mark.parametrize("m,k,p", [(3, 4, 2), (1, 1, 1), (16, 16, 16), (5, 9, 3)])
    def test_triple_loop_reference(self, m, k, p):
        rng = np.random.default_rng(m * 100 + k * 10 + p)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, p))
        ref = np.zeros((m, p))
        for i in range(m):
            for j in range(p):
                for t in range(k):
                    ref[i, j] += a[i, t] * b[t, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_batched_gradient(self):
        rng = np.random.default_rng(0)
        a, b = _param(rng, 2, 3, 4, name="a"), _param(rng, 4, 5, name="b")
        assert grad_check(lambda: ((a @ b) * (a @ b)).sum(), [a, b]) < 1e-6

    def test_both_batched_gradient(self):
        rng = np.random.default_rng(1)
        a, b = _param(rng, 2, 3, 4, name="a"), _param(rng, 2, 4, 3, name="b")
        assert grad_check(lambda: (a @ b).exp().sum(), [a, b]) < 1e-6


class TestSoftmax:
    def test_symmetric_row(self):
        np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_no_overflow(self):
        out = softmax_rows(Tensor([[1000.0, 0.0]])).data
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_extended_precision_reference(self):
        rng = np.random.default_rng(2)
        x = rng.normal(scale=3, size=(4, 7))
        xl = x.astype(np.longdouble)
        e = np.exp(xl - xl.max(axis=1, keepdims=True))
        ref = (e / e.sum(axis=1, keepdims=True)).astype(float)
        np.testing.assert_allclose(softmax_rows(Tensor(x)).data, ref, rtol=0, atol=1e-12)

    @given(arrays(np.float64, (3, 5), elements=finite))
    def test_rows_sum_to_one(self, x):
        out = softmax_rows(Tensor(x)).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = _param(rng, 3, 4)
        w = rng.normal(size=(3, 4))
        assert grad_check(lambda: (softmax(x, axis=-1) * Tensor(w)).sum(), [x]) < 1e-6


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_already_normalised_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-7)

    def test_direct_formula(self):
        rng = np.random.default_rng(4)
        x, g, b = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
        ref = np.empty_like(x)
        for i, row in enumerate(x):
            mean = sum(row) / len(row)
            var = sum((v - mean) ** 2 for v in row) / len(row)
            ref[i] = [(v - mean) / np.sqrt(var + 1e-8) * gg + bb for v, gg, bb in zip(row, g, b)]
        np.testing.assert_allclose(layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, ref, atol=1e-10)

    @given(arrays(np.float64, (2, 6), elements=st.floats(-100, 100)))
    def test_standardised_rows(self, x):
        if (x.std(axis=1) < 1e-2).any():
            return
        out = layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
        v = x.var(axis=1)
        # the 1e-8 epsilon shrinks the variance to v / (v + eps)
        np.testing.assert_allclose(out.var(axis=1), v / (v + 1e-8), atol=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x, g, b = _param(rng, 2, 3, 5, name="x"), _param(rng, 5, name="g"), _param(rng, 5, name="b")
        w = rng.normal(size=(2, 3, 5))
        assert grad_check(lambda: (layer_norm(x, g, b) * Tensor(w)).sum(), [x, g, b]) < 1e-5


class TestElementwiseGradients:
    """Every differentiable op against central differences at h=1e-5."""

    @pytest.mark.parametrize("op", [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: a / (b * b + 1.0),
        lambda a, b: (a * a + 1.0).log() * b,
        lambda a, b: a.exp() * b,
        lambda a, b: a.relu() * b,
        lambda a, b: a.sigmoid() + b.sigmoid() * a,
        lambda a, b: (a * b).clip(-0.5, 0.5),
        lambda a, b: (a.reciprocal() * 0.01) * b,
        lambda a, b: (a @ b.T).sum(axis=0),
        lambda a, b: a.T.reshape(12) * b.transpose(1, 0).reshape(12),
        lambda a, b: a[1:, ::2] * b[:2, 1:3],
        lambda a, b: a.mean(axis=1, keepdims=True) * b,
        lambda a, b: a.take_rows(np.array([0, 0, 2])) * b.take_rows(np.array([1, 2, 2])),
    ])
    def test_op(self, op):
        rng = np.random.default_rng(6)
        a = Parameter(rng.uniform(0.3, 1.5, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), "a")
        b = _param(rng, 3, 4, name="b")
        w = Tensor(rng.normal(size=op(a, b).shape))
        assert grad_check(lambda: (op(a, b) * w).sum(), [a, b]) < 1e-4

    def test_broadcast_gradient(self):
        rng = np.random.default_rng(7)
        a, b = _param(rng, 2, 3, 4, name="a"), _param(rng, 4, name="b")
        assert grad_check(lambda: ((a + b) * (a * b)).sum(), [a, b]) < 1e-6

    def test_reused_node(self):
        x = Parameter(np.array([1.5]), "x")
        y = x * x
        z = (y * y + y).sum()
        z.backward()
        assert x.grad[0] == pytest.approx(4 * 1.5 ** 3 + 2 * 1.5)


class TestSymmetricKL:
    def test_matches_probability_form(self):
        rng = np.random.default_rng(8)
        z1, z2 = rng.normal(size=(5, 9)), rng.normal(size=(5, 9))
        p, q = softmax(Tensor(z1)).data, softmax(Tensor(z2)).data
        ref = 0.5 * (np.sum(p * np.log(p / q), -1) + np.sum(q * np.log(q / p), -1))
        np.testing.assert_allclose(symmetric_kl_from_logits(Tensor(z1), Tensor(z2)).data, ref, atol=1e-14)

    def test_gradient_through_both_views(self):
        rng = np.random.default_rng(9)
        a, b = _param(rng, 4, 6, name="a"), _param(rng, 4, 6, name="b")
        assert grad_check(lambda: symmetric_kl_from_logits(a, b).sum(), [a, b]) < 1e-6
        assert np.abs(a.grad).sum() > 0 and np.abs(b.grad).sum() > 0

    def test_identical_is_zero(self):
        z = np.random.default_rng(10).normal(size=(3, 4))
        np.testing.assert_array_equal(symmetric_kl_from_logits(Tensor(z), Tensor(z.copy())).data, 0.0)

    def test_floor_keeps_extreme_logits_finite(self):
        out = symmetric_kl_from_logits(Tensor([[500.0, -500.0]]), Tensor([[0.0, 0.0]]))
        assert np.isfinite(out.data).all() and out.data[0] > 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            symmetric_kl_from_logits(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))))


class TestDropout:
    def test_eval_is_identity(self):
        x = Tensor(np.ones((4, 4)))
        assert dropout(x, 0.5, None, train=False) is x

    def test_seeded_and_scaled(self):
        x = Tensor(np.ones((200, 50)))
        a = dropout(x, 0.3, np.random.default_rng(0), True).data
        b = dropout(x, 0.3, np.random.default_rng(0), True).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 1.0 / 0.7}
        assert a.mean() == pytest.approx(1.0, abs=0.02)


class TestGradCheck:
    def test_quadratic(self):
        x = Parameter(np.array([1.0, 2.0]), "x")
        err = grad_check(lambda: (x * x).sum(), [x])
        np.testing.assert_allclose(x.grad, [2.0, 4.0])
        assert err < 1e-6

    def test_detects_wrong_gradient(self):
        x = Parameter(np.array([0.7, -0.2]), "x")

        def wrong():
            def backward(g):
                x._accumulate(g * 3.0)
            return Tensor._make(x.data.sum() * 2.0, (x,), backward)

        assert grad_check(wrong, [x]) > 0.1

    def test_five_point_stencil(self):
        x = Parameter(np.array([0.3, -1.1]), "x")
        # cubic terms leave a truncation error under the two-point rule at large h
        assert grad_check(lambda: (x * x * x).sum(), [x], h=1e-2, order=4) < 1e-12
        assert grad_check(lambda: (x * x * x).sum(), [x], h=1e-2) > 1e-6

    def test_bad_order(self):
        x = Parameter(np.array([1.0]), "x")
        with pytest.raises(ValueError):
            grad_check(lambda: x.sum(), [x], order=3)

    def test_non_finite_probe(self):
        x = Parameter(np.array([0.0]), "x")
        with np.errstate(divide="ignore"), pytest.raises(ProbeError):
            grad_check(lambda: x.log().sum(), [x])

    def test_parameter_grad_shape(self):
        p = Parameter(np.zeros((2, 3)), "w")
        assert p.grad.shape == p.data.shape
        (p * 2.0).sum().backward()
        assert p.grad.shape == p.data.shape
