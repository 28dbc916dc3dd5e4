"""Forward semantics of the tensor primitives against direct numpy oracles."""

import numpy as np
import pytest

from ikdnet.engine import (
    NumericFault,
    ShapeError,
    Tensor,
    apply_primitive,
    primitive_table,
)
from ikdnet.engine import ops


def t64(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def test_sigmoid_at_zero():
    out = ops.sigmoid(t64([0.0]))
    assert out.data[0] == 0.5


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = t64(rng.standard_normal((3, 6, 5)))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    y = ops.conv2d(x, t64(w), t64(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x.data)


def test_softmax_matches_exp_normalize_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 5))
    y = ops.softmax(t64(x), axis=1).data
    oracle = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    assert abs(y.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(y, oracle, rtol=1e-12)


@pytest.mark.parametrize("shape,axis", [((4, 7), 1), ((3, 2, 5), 0), ((6,), 0), ((2, 3, 4), 2)])
def test_softmax_positive_and_normalized(shape, axis):
    rng = np.random.default_rng(hash(shape) % 2**32)
    y = ops.softmax(t64(rng.standard_normal(shape) * 5), axis=axis).data
    assert (y > 0).all()
    np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)


def test_batch_norm_eval_is_pure_affine():
    rng = np.random.default_rng(2)
    gamma, beta = t64(rng.standard_normal(4)), t64(rng.standard_normal(4))
    rm = rng.standard_normal(4)
    rv = rng.uniform(0.5, 2.0, 4)
    x1 = rng.standard_normal((4, 8, 8))
    x2 = rng.standard_normal((4, 8, 8))
    x2[:, 0, 0] = x1[:, 0, 0]

    def run(x):
        return ops.batch_norm(
            t64(x), gamma, beta, rm.copy(), rv.copy(), axis=0, training=False
        ).data

    # same input pixel -> same output regardless of the rest of the batch
    np.testing.assert_array_equal(run(x1)[:, 0, 0], run(x2)[:, 0, 0])
    # matches the explicit affine map
    expected = gamma.data[:, None, None] * (
        (x1 - rm[:, None, None]) / np.sqrt(rv[:, None, None] + 1e-5)
    ) + beta.data[:, None, None]
    np.testing.assert_allclose(run(x1), expected, rtol=1e-12)


def test_batch_norm_eval_does_not_touch_running_stats():
    rm, rv = np.zeros(2), np.ones(2)
    ops.batch_norm(
        t64(np.random.default_rng(0).standard_normal((2, 4, 4))),
        t64(np.ones(2)), t64(np.zeros(2)), rm, rv, axis=0, training=False,
    )
    np.testing.assert_array_equal(rm, 0.0)
    np.testing.assert_array_equal(rv, 1.0)


def test_concat_then_split_is_identity():
    rng = np.random.default_rng(3)
    parts = [t64(rng.standard_normal((c, 4, 4))) for c in (2, 3, 1)]
    joined = ops.concat(parts, axis=0)
    back = ops.split(joined, [2, 3, 1], axis=0)
    for orig, got in zip(parts, back):
        np.testing.assert_array_equal(orig.data, got.data)


def test_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError) as exc:
        ops.add(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ops.matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 2))))


def test_non_finite_output_raises_numeric_fault():
    with pytest.raises(NumericFault) as exc:
        ops.div(t64([1.0]), t64([0.0]))
    assert "div" in str(exc.value)


def test_mixed_dtypes_rejected():
    a = Tensor(np.zeros(3, dtype=np.float32))
    b = Tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(Exception, match="dtype"):
        ops.add(a, b)


def test_channel_broadcast_multiply():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3, 4))
    gate = rng.uniform(0, 1, (1, 3, 4))
    y = ops.mul(t64(x), t64(gate)).data
    np.testing.assert_allclose(y, x * gate, rtol=1e-12)


def test_reduce_mean_max_channel_axis():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 3, 3))
    np.testing.assert_allclose(
        ops.reduce_mean(t64(x), axis=0, keepdims=True).data, x.mean(0, keepdims=True)
    )
    np.testing.assert_allclose(
        ops.reduce_max(t64(x), axis=0, keepdims=True).data, x.max(0, keepdims=True)
    )


def test_maxpool_same_pad_matches_window_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 5, 5))
    y = ops.maxpool2d(t64(x), (3, 3), (1, 1), pad=(1, 1), pad_value=-np.inf).data
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    for c in range(2):
        for i in range(5):
            for j in range(5):
                assert y[c, i, j] == padded[c, i : i + 3, j : j + 3].max()


def test_upsample2x_shape_and_constant_map():
    x = t64(np.full((2, 3, 4), 7.0))
    y = ops.upsample2x(x)
    assert y.shape == (2, 6, 8)
    np.testing.assert_allclose(y.data, 7.0, rtol=1e-12)


def test_primitive_table_documents_all_ops():
    table = primitive_table()
    for name in ("conv2d", "matmul", "batch_norm", "softmax", "concat",
                 "maxpool2d", "upsample2x", "gather_rows", "scatter_project"):
        assert name in table and table[name]


def test_apply_primitive_unknown_op():
    with pytest.raises(Exception, match="unknown primitive"):
        apply_primitive("definitely_not_an_op", [t64([1.0])])
