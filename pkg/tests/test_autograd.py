"""Backward-pass verification: analytic gradients against central differences."""

import numpy as np
import pytest

from ikdnet.engine import (
    ContractViolation,
    Tape,
    Tensor,
    backward,
    grad_check,
    load_tensors,
    parameter_init,
    save_tensors,
)
from ikdnet.engine import ops
from ikdnet.engine.autodiff import REGISTRY


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def test_sum_gradient_is_ones():
    x = t64(np.random.default_rng(0).standard_normal((3, 4)))
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_sigmoid_gradient_at_zero():
    x = t64([0.0])
    with Tape() as tape:
        loss = ops.reduce_sum(ops.sigmoid(x))
    backward(tape, loss)
    assert abs(x.grad[0] - 0.25) < 1e-12


def test_three_layer_composition_matches_finite_differences():
    """conv -> relu -> cross-entropy-style reduction, checked against FD."""
    rng = np.random.default_rng(7)
    x = t64(rng.standard_normal((2, 6, 6)))
    w = t64(rng.standard_normal((3, 2, 3, 3)) * 0.4)
    b = t64(rng.standard_normal(3) * 0.1)
    labels = rng.integers(0, 3, size=(6, 6))
    onehot = np.zeros((3, 6, 6))
    onehot[labels, np.arange(6)[:, None], np.arange(6)[None, :]] = 1.0

    def f(x, w, b):
        h = ops.relu(ops.conv2d(x, w, b))
        p = ops.softmax(h, axis=0)
        picked = ops.mul(ops.log(ops.clamp_min(p, 1e-12)), Tensor(onehot, dtype=np.float64))
        return ops.scale(ops.reduce_sum(picked), -1.0 / 36)

    report = grad_check(f, [x, w, b], step=1e-5, tol=1e-4, names=["x", "w", "b"])
    assert report.passed, str(report)


def test_gradient_accumulates_across_multiple_uses():
    x = t64([2.0, -1.0])
    with Tape() as tape:
        y = ops.add(ops.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
        loss = ops.reduce_sum(y)
    backward(tape, loss)
    np.testing.assert_allclose(x.grad, [5.0, -1.0], rtol=1e-12)


def test_concat_routes_gradients_to_correct_slices():
    rng = np.random.default_rng(8)
    a = t64(rng.standard_normal((2, 3)))
    b = t64(rng.standard_normal((4, 3)))
    scale_vec = rng.standard_normal((6, 3))

    def f(a, b):
        joined = ops.concat([a, b], axis=0)
        return ops.reduce_sum(ops.mul(joined, Tensor(scale_vec, dtype=np.float64)))

    report = grad_check(f, [a, b], names=["a", "b"])
    assert report.passed, str(report)
    # analytic check of the routing itself
    a.zero_grad(), b.zero_grad()
    with Tape() as tape:
        loss = f(a, b)
    backward(tape, loss)
    np.testing.assert_allclose(a.grad, scale_vec[:2], rtol=1e-12)
    np.testing.assert_allclose(b.grad, scale_vec[2:], rtol=1e-12)


def test_backward_rejects_non_scalar_loss():
    x = t64(np.ones(3))
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(ContractViolation, match="scalar"):
        backward(tape, y)


def test_backward_rejects_off_tape_loss():
    x = t64(np.ones(3))
    with Tape() as tape:
        ops.mul(x, x)
    stray = ops.reduce_sum(ops.mul(x, x))  # recorded on no tape
    with pytest.raises(ContractViolation, match="not produced"):
        backward(tape, stray)


# ---------------------------------------------------------------------------
# every primitive against finite differences, randomized shapes


def _rand(rng, shape):
    return t64(rng.standard_normal(shape))


def _primitive_cases(rng):
    n, m, k = rng.integers(2, 6, size=3)
    h, w = rng.integers(3, 7, size=2)
    c = int(rng.integers(1, 4))
    cases = {
        "add": (lambda a, b: ops.add(a, b), [_rand(rng, (n, m)), _rand(rng, (n, m))]),
        "add_bias": (lambda a, b: ops.add(a, b), [_rand(rng, (n, m)), _rand(rng, (m,))]),
        "sub": (lambda a, b: ops.sub(a, b), [_rand(rng, (n, m)), _rand(rng, (n, m))]),
        "mul": (lambda a, b: ops.mul(a, b), [_rand(rng, (n, m)), _rand(rng, (n, m))]),
        "mul_bcast": (lambda a, b: ops.mul(a, b),
                      [_rand(rng, (c, h, w)), _rand(rng, (1, h, w))]),
        "div": (lambda a, b: ops.div(a, b),
                [_rand(rng, (n, m)),
                 t64(rng.uniform(0.5, 2.0, (n, m)) * rng.choice([-1, 1], (n, m)))]),
        "neg": (ops.neg, [_rand(rng, (n, m))]),
        "scale": (lambda a: ops.scale(a, 1.7), [_rand(rng, (n, m))]),
        "add_scalar": (lambda a: ops.add_scalar(a, -0.3), [_rand(rng, (n, m))]),
        "matmul": (ops.matmul, [_rand(rng, (n, k)), _rand(rng, (k, m))]),
        "conv2d_3x3": (ops.conv2d,
                       [_rand(rng, (c, h, w)), _rand(rng, (2, c, 3, 3)), _rand(rng, (2,))]),
        "conv2d_1x1": (ops.conv2d,
                       [_rand(rng, (c, h, w)), _rand(rng, (2, c, 1, 1)), _rand(rng, (2,))]),
        "conv2d_7x7": (ops.conv2d,
                       [_rand(rng, (2, h, w)), _rand(rng, (1, 2, 7, 7)), _rand(rng, (1,))]),
        "relu": (ops.relu, [_rand(rng, (n, m))]),
        "sigmoid": (ops.sigmoid, [_rand(rng, (n, m))]),
        "softmax": (lambda a: ops.softmax(a, axis=1), [_rand(rng, (n, m))]),
        "log": (ops.log, [t64(rng.uniform(0.2, 3.0, (n, m)))]),
        "clamp_min": (lambda a: ops.clamp_min(a, 0.1), [t64(rng.uniform(-2, 2, (n, m)))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=0),
                   [_rand(rng, (n, m)), _rand(rng, (k, m))]),
        "slice_axis": (lambda a: ops.slice_axis(a, 0, 1, int(n)), [_rand(rng, (n, m))]),
        "reshape": (lambda a: ops.reshape(a, (int(m), int(n))), [_rand(rng, (n, m))]),
        "transpose": (lambda a: ops.transpose(a, (1, 0)), [_rand(rng, (n, m))]),
        "reduce_sum": (lambda a: ops.reduce_sum(a, axis=1), [_rand(rng, (n, m))]),
        "reduce_mean": (lambda a: ops.reduce_mean(a, axis=0, keepdims=True),
                        [_rand(rng, (n, m))]),
        "reduce_max": (lambda a: ops.reduce_max(a, axis=1), [_rand(rng, (n, m))]),
        "maxpool_3x3": (lambda a: ops.maxpool2d(a, (3, 3), (1, 1), (1, 1), -np.inf),
                        [_rand(rng, (c, h, w))]),
        "maxpool_2x2": (lambda a: ops.maxpool2d(a, (2, 2), (2, 2)),
                        [_rand(rng, (c, 6, 6))]),
        "upsample2x": (ops.upsample2x, [_rand(rng, (c, h, w))]),
        "gather_rows": (
            lambda a, _idx=rng.integers(0, n, size=7): ops.gather_rows(a, _idx),
            [_rand(rng, (n, m))]),
        "scatter_project": (
            lambda a, _win=rng.integers(-1, n, size=(h, w)): ops.scatter_project(
                a, _win, fill=0.0),
            [_rand(rng, (n, m))]),
        "where_mask": (
            lambda a, b, _mask=rng.random((n, m)) > 0.5: ops.where_mask(_mask, a, b),
            [_rand(rng, (n, m)), _rand(rng, (n, m))]),
        "batch_norm_train": (
            lambda x, g, b: ops.batch_norm(
                x, g, b, np.zeros(c), np.ones(c), axis=0, training=True),
            [_rand(rng, (c, h, w)), t64(rng.uniform(0.5, 1.5, c)), _rand(rng, (c,))]),
        "batch_norm_eval": (
            lambda x, g, b,
            _rm=rng.standard_normal(c), _rv=rng.uniform(0.5, 2.0, c): ops.batch_norm(
                x, g, b, _rm, _rv, axis=0, training=False),
            [_rand(rng, (c, h, w)), t64(rng.uniform(0.5, 1.5, c)), _rand(rng, (c,))]),
    }
    return cases


def test_every_primitive_matches_finite_differences_20_seeds():
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, (fn, leaves) in _primitive_cases(rng).items():
            def scalar_fn(*ls, _fn=fn):
                out = _fn(*ls)
                mixer = Tensor(
                    np.random.default_rng(99).standard_normal(out.shape), dtype=np.float64
                )
                return ops.reduce_sum(ops.mul(out, mixer))

            report = grad_check(scalar_fn, leaves, step=1e-5, tol=1e-4)
            if not report.passed:
                failures.append((seed, name, report.max_rel_err))
    assert not failures, failures


def test_corrupted_backward_rule_is_detected():
    correct = REGISTRY["sigmoid"].backward
    REGISTRY["sigmoid"].backward = staticmethod(
        lambda ctx, g: (g * 0.9,)
    ).__func__
    try:
        x = t64(np.random.default_rng(1).standard_normal(8))
        report = grad_check(lambda a: ops.reduce_sum(ops.sigmoid(a)), [x], names=["x"])
        assert not report.passed
        assert not report.leaves[0].passed
    finally:
        REGISTRY["sigmoid"].backward = correct


# ---------------------------------------------------------------------------
# parameter init


def test_parameter_init_zeros_and_ones():
    assert (parameter_init((3, 4), "zeros", 0).data == 0).all()
    assert (parameter_init((3, 4), "ones", 0).data == 1).all()


def test_parameter_init_deterministic():
    a = parameter_init((5, 7), "fan_uniform", 123)
    b = parameter_init((5, 7), "fan_uniform", 123)
    np.testing.assert_array_equal(a.data, b.data)


def test_fan_uniform_bounds_and_mean():
    t = parameter_init((100, 100), "fan_uniform", 7)
    bound = np.sqrt(6.0 / 200.0)
    assert (np.abs(t.data) <= bound).all()
    assert abs(t.data.mean()) < 0.02


def test_parameter_init_bad_scheme():
    with pytest.raises(ContractViolation):
        parameter_init((2,), "gaussian", 0)


# ---------------------------------------------------------------------------
# checkpoint round trip


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    tensors = {
        "enc.w": rng.standard_normal((3, 4, 2, 2)).astype(np.float32),
        "enc.b": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(3.5).reshape(()),
    }
    path = str(tmp_path / "model.ikdt")
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        np.testing.assert_array_equal(loaded[name], tensors[name])


def test_checkpoint_truncation_reports_offset(tmp_path):
    path = str(tmp_path / "model.ikdt")
    save_tensors(path, {"w": np.ones((4, 4), dtype=np.float32)})
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-7])
    with pytest.raises(Exception, match="offset"):
        load_tensors(path)


def test_checkpoint_bad_magic(tmp_path):
    path = str(tmp_path / "junk.ikdt")
    open(path, "wb").write(b"NOPE" + b"\0" * 32)
    with pytest.raises(Exception, match="magic"):
        load_tensors(path)
