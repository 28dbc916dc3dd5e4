"""Primitive table: forward/backward rules for every taped operation.

Shape rules are deliberately narrow. Binary ops accept three patterns only:
identical shapes, a trailing 1-D bias, or same-rank broadcasting where the
second operand has extent 1 on some axes. Anything else is a ShapeError.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .autodiff import ShapeError, Tensor, apply_primitive, register

# ---------------------------------------------------------------------------
# binary elementwise


def _binary_mode(op, a, b):
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]:
        return "bias"
    if a.ndim == b.ndim and all(sb in (1, sa) for sa, sb in zip(a.shape, b.shape)):
        return "bcast"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(g, shape, mode):
    if mode == "same":
        return g
    if mode == "bias":
        return g.reshape(-1, shape[0]).sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


_BINARY_RULE = "(S), (S) | (..., D), (D,) bias | same-rank with extent-1 axes on rhs"


@register("add", _BINARY_RULE)
class _Add:
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(_binary_mode("add", a, b), b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        mode, bshape = ctx.saved
        return g, _reduce_to(g, bshape, mode)


@register("sub", _BINARY_RULE)
class _Sub:
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(_binary_mode("sub", a, b), b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        mode, bshape = ctx.saved
        return g, -_reduce_to(g, bshape, mode)


@register("mul", _BINARY_RULE)
class _Mul:
    @staticmethod
    def forward(ctx, a, b):
        mode = _binary_mode("mul", a, b)
        ctx.save(mode, a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        mode, a, b = ctx.saved
        b_full = b if mode == "same" else np.broadcast_to(b, a.shape)
        return g * b_full, _reduce_to(g * a, b.shape, mode)


@register("div", "(S), (S) elementwise")
class _Div:
    @staticmethod
    def forward(ctx, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"div: shapes {a.shape} and {b.shape} differ")
        ctx.save(a, b)
        return a / b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return g / b, -g * a / (b * b)


@register("neg", "(S) -> (S)")
class _Neg:
    @staticmethod
    def forward(ctx, x):
        return -x

    @staticmethod
    def backward(ctx, g):
        return (-g,)


@register("scale", "(S) -> (S), scalar attr c")
class _Scale:
    @staticmethod
    def forward(ctx, x, c):
        return x * x.dtype.type(c)

    @staticmethod
    def backward(ctx, g):
        return (g * g.dtype.type(ctx.attrs["c"]),)


@register("add_scalar", "(S) -> (S), scalar attr c")
class _AddScalar:
    @staticmethod
    def forward(ctx, x, c):
        return x + x.dtype.type(c)

    @staticmethod
    def backward(ctx, g):
        return (g,)


# ---------------------------------------------------------------------------
# linear algebra / convolution


@register("matmul", "(M,K) @ (K,N) -> (M,N)")
class _MatMul:
    @staticmethod
    def forward(ctx, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
        ctx.save(a, b)
        return a @ b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return g @ b.T, a.T @ g


@register("conv2d", "(Cin,H,W) * (Cout,Cin,k,k) + (Cout,) -> (Cout,H,W); odd k, same pad, stride 1")
class _Conv2d:
    @staticmethod
    def forward(ctx, x, w, b):
        if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
            raise ShapeError(f"conv2d: input {x.shape} vs kernel {w.shape}")
        cout, cin, kh, kw = w.shape
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"conv2d: kernel must be odd square, got {w.shape}")
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias {b.shape} vs kernel {w.shape}")
        _, h, ww = x.shape
        if kh == 1:
            cols = x.reshape(cin, h * ww)
        else:
            cols = kernels.im2col(x, kh, kh // 2)
        y = w.reshape(cout, cin * kh * kw) @ cols + b[:, None]
        ctx.save(cols, w, x.shape)
        return y.reshape(cout, h, ww)

    @staticmethod
    def backward(ctx, g):
        cols, w, xshape = ctx.saved
        cout, cin, k, _ = w.shape
        _, h, ww = xshape
        g_mat = g.reshape(cout, h * ww)
        gw = (g_mat @ cols.T).reshape(w.shape)
        gb = g_mat.sum(axis=1)
        gcols = w.reshape(cout, cin * k * k).T @ g_mat
        if k == 1:
            gx = gcols.reshape(xshape)
        else:
            gx = kernels.col2im(gcols, cin, h, ww, k, k // 2)
        return gx, gw, gb


def _channel_shape(x, axis):
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    return tuple(shape)


@register("batch_norm", "(..C..) with (C,) gamma/beta; normalizes over all non-channel axes")
class _BatchNorm:
    @staticmethod
    def forward(ctx, x, gamma, beta, axis, eps, momentum, training,
                running_mean, running_var):
        c = x.shape[axis]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeError(
                f"batch_norm: gamma {gamma.shape}/beta {beta.shape} vs channels ({c},)"
            )
        axes = tuple(i for i in range(x.ndim) if i != axis)
        cshape = _channel_shape(x, axis)
        n = x.size // c
        if training:
            mean = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
            unbiased = var * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.reshape(-1).astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased.reshape(-1).astype(running_var.dtype)
        else:
            mean = running_mean.astype(x.dtype).reshape(cshape)
            var = running_var.astype(x.dtype).reshape(cshape)
        invstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = (x - mean) * invstd
        ctx.save(xhat, invstd, gamma, axes, cshape, n, training)
        return gamma.reshape(cshape) * xhat + beta.reshape(cshape)

    @staticmethod
    def backward(ctx, g):
        xhat, invstd, gamma, axes, cshape, n, training = ctx.saved
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.reshape(cshape)
        if training:
            sum_g = gxhat.sum(axis=axes, keepdims=True)
            sum_gx = (gxhat * xhat).sum(axis=axes, keepdims=True)
            gx = invstd * (gxhat - sum_g / n - xhat * (sum_gx / n))
        else:
            gx = gxhat * invstd
        return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# nonlinearities


@register("relu", "(S) -> (S)")
class _Relu:
    @staticmethod
    def forward(ctx, x):
        ctx.save(x)
        return np.maximum(x, 0)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved
        return (g * (x > 0),)


@register("sigmoid", "(S) -> (S)")
class _Sigmoid:
    @staticmethod
    def forward(ctx, x):
        # split by sign for stability at large |x|
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        y[~pos] = e / (1.0 + e)
        ctx.save(y)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        return (g * y * (1.0 - y),)


@register("softmax", "(S) -> (S), normalized over attr axis")
class _Softmax:
    @staticmethod
    def forward(ctx, x, axis):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        ctx.save(y, axis)
        return y

    @staticmethod
    def backward(ctx, g):
        y, axis = ctx.saved
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@register("log", "(S) -> (S); input must be positive")
class _Log:
    @staticmethod
    def forward(ctx, x):
        ctx.save(x)
        return np.log(x)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved
        return (g / x,)


@register("clamp_min", "(S) -> (S), scalar attr cmin; gradient passes where x > cmin")
class _ClampMin:
    @staticmethod
    def forward(ctx, x, cmin):
        ctx.save(x, cmin)
        return np.maximum(x, x.dtype.type(cmin))

    @staticmethod
    def backward(ctx, g):
        x, cmin = ctx.saved
        return (g * (x > cmin),)


# ---------------------------------------------------------------------------
# shape manipulation


@register("concat", "n tensors equal except along attr axis")
class _Concat:
    @staticmethod
    def forward(ctx, *xs, axis):
        ref = xs[0].shape
        for x in xs[1:]:
            if len(x.shape) != len(ref) or any(
                i != axis and s != r for i, (s, r) in enumerate(zip(x.shape, ref))
            ):
                raise ShapeError(f"concat: shapes {[x.shape for x in xs]} on axis {axis}")
        ctx.save([x.shape[axis] for x in xs], axis)
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, g):
        sizes, axis = ctx.saved
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


@register("slice_axis", "(S) -> slice [start:stop) along attr axis")
class _SliceAxis:
    @staticmethod
    def forward(ctx, x, axis, start, stop):
        if not (0 <= start < stop <= x.shape[axis]):
            raise ShapeError(f"slice_axis: [{start}:{stop}) out of {x.shape} axis {axis}")
        ctx.save(x.shape, axis, start, stop)
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, stop)
        return np.ascontiguousarray(x[tuple(idx)])

    @staticmethod
    def backward(ctx, g):
        shape, axis, start, stop = ctx.saved
        gx = np.zeros(shape, dtype=g.dtype)
        idx = [slice(None)] * len(shape)
        idx[axis] = slice(start, stop)
        gx[tuple(idx)] = g
        return (gx,)


@register("reshape", "(S) -> attr shape, same element count")
class _Reshape:
    @staticmethod
    def forward(ctx, x, shape):
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)} changes element count")
        ctx.save(x.shape)
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        (shape,) = ctx.saved
        return (g.reshape(shape),)


@register("transpose", "(S) -> permuted by attr axes")
class _Transpose:
    @staticmethod
    def forward(ctx, x, axes):
        ctx.save(tuple(np.argsort(axes)))
        return np.ascontiguousarray(x.transpose(axes))

    @staticmethod
    def backward(ctx, g):
        (inv,) = ctx.saved
        return (np.ascontiguousarray(g.transpose(inv)),)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis,)
    return tuple(axis)


@register("reduce_sum", "(S) -> sum over attr axis (None=all)")
class _ReduceSum:
    @staticmethod
    def forward(ctx, x, axis, keepdims):
        axes = _norm_axis(axis, x.ndim)
        ctx.save(x.shape, axes, keepdims)
        return x.sum(axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        shape, axes, keepdims = ctx.saved
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)


@register("reduce_mean", "(S) -> mean over attr axis (None=all)")
class _ReduceMean:
    @staticmethod
    def forward(ctx, x, axis, keepdims):
        axes = _norm_axis(axis, x.ndim)
        count = int(np.prod([x.shape[i] for i in axes]))
        ctx.save(x.shape, axes, keepdims, count)
        return x.mean(axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        shape, axes, keepdims, count = ctx.saved
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)


@register("reduce_max", "(S) -> max over attr axis (int); first max wins gradient")
class _ReduceMax:
    @staticmethod
    def forward(ctx, x, axis, keepdims):
        am = np.argmax(x, axis=axis)
        y = np.take_along_axis(x, np.expand_dims(am, axis), axis=axis)
        ctx.save(x.shape, axis, keepdims, am)
        return y if keepdims else np.squeeze(y, axis=axis)

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims, am = ctx.saved
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(am, axis), g, axis=axis)
        return (gx,)


# ---------------------------------------------------------------------------
# spatial kernels


@register("maxpool2d", "(C,H,W) -> (C,Ho,Wo); attrs kernel, stride, pad, pad_value",
          finite_mode="allow_neg_inf")
class _MaxPool2d:
    @staticmethod
    def forward(ctx, x, kernel, stride, pad, pad_value):
        if x.ndim != 3:
            raise ShapeError(f"maxpool2d: expected (C,H,W), got {x.shape}")
        out, arg = kernels.maxpool2d_forward(
            x, kernel[0], kernel[1], stride[0], stride[1], pad[0], pad[1], pad_value
        )
        ctx.save(arg, x.shape)
        return out

    @staticmethod
    def backward(ctx, g):
        arg, shape = ctx.saved
        return (kernels.maxpool2d_backward(np.ascontiguousarray(g), arg, *shape),)


@register("upsample2x", "(C,H,W) -> (C,2H,2W) bilinear")
class _Upsample2x:
    @staticmethod
    def forward(ctx, x):
        if x.ndim != 3:
            raise ShapeError(f"upsample2x: expected (C,H,W), got {x.shape}")
        return kernels.upsample2x_forward(x)

    @staticmethod
    def backward(ctx, g):
        return (kernels.upsample2x_backward(np.ascontiguousarray(g)),)


# ---------------------------------------------------------------------------
# indexed data movement


@register("gather_rows", "(N,D) with attr idx (M,) -> (M,D)")
class _GatherRows:
    @staticmethod
    def forward(ctx, x, idx):
        if x.ndim != 2:
            raise ShapeError(f"gather_rows: expected (N,D), got {x.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
            raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
        ctx.save(x.shape[0], idx)
        return kernels.gather_rows(x, idx)

    @staticmethod
    def backward(ctx, g):
        n, idx = ctx.saved
        return (kernels.scatter_add_rows(np.ascontiguousarray(g), idx, n),)


@register("scatter_project",
          "(N,C) with attr winner (H,W) of row indices (-1 hole) -> (C,H,W), holes = fill",
          finite_mode="allow_neg_inf")
class _ScatterProject:
    @staticmethod
    def forward(ctx, feats, winner, fill):
        if feats.ndim != 2:
            raise ShapeError(f"scatter_project: expected (N,C), got {feats.shape}")
        h, w = winner.shape
        flat = winner.reshape(-1)
        mask = flat >= 0
        if mask.any() and flat[mask].max() >= feats.shape[0]:
            raise ShapeError(
                f"scatter_project: winner index {flat[mask].max()} out of range "
                f"for {feats.shape[0]} points"
            )
        out = np.full((feats.shape[1], h * w), feats.dtype.type(fill), dtype=feats.dtype)
        out[:, mask] = feats[flat[mask]].T
        ctx.save(feats.shape[0], flat, mask)
        return out.reshape(feats.shape[1], h, w)

    @staticmethod
    def backward(ctx, g):
        n, flat, mask = ctx.saved
        rows = np.ascontiguousarray(g.reshape(g.shape[0], -1)[:, mask].T)
        return (kernels.scatter_add_rows(rows, flat[mask], n),)


@register("where_mask", "attr mask (S) selecting a (true) or b (false), both (S)",
          finite_mode="allow_neg_inf")
class _WhereMask:
    @staticmethod
    def forward(ctx, a, b, mask):
        if a.shape != b.shape or mask.shape != a.shape:
            raise ShapeError(f"where_mask: shapes {a.shape}, {b.shape}, mask {mask.shape}")
        ctx.save(mask)
        return np.where(mask, a, b)

    @staticmethod
    def backward(ctx, g):
        (mask,) = ctx.saved
        zero = np.zeros((), dtype=g.dtype)
        return np.where(mask, g, zero), np.where(mask, zero, g)


# ---------------------------------------------------------------------------
# functional wrappers (the network-facing API)


def _t(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def add(a, b):
    return apply_primitive("add", [_t(a), _t(b, a)])


def sub(a, b):
    return apply_primitive("sub", [_t(a), _t(b, a)])


def mul(a, b):
    return apply_primitive("mul", [_t(a), _t(b, a)])


def div(a, b):
    return apply_primitive("div", [_t(a), _t(b, a)])


def neg(x):
    return apply_primitive("neg", [x])


def scale(x, c):
    return apply_primitive("scale", [x], c=float(c))


def add_scalar(x, c):
    return apply_primitive("add_scalar", [x], c=float(c))


def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def conv2d(x, w, b):
    return apply_primitive("conv2d", [x, w, b])


def batch_norm(x, gamma, beta, running_mean, running_var, axis=0,
               eps=1e-5, momentum=0.1, training=True):
    return apply_primitive(
        "batch_norm", [x, gamma, beta], axis=axis, eps=eps, momentum=momentum,
        training=training, running_mean=running_mean, running_var=running_var,
    )


def relu(x):
    return apply_primitive("relu", [x])


def sigmoid(x):
    return apply_primitive("sigmoid", [x])


def softmax(x, axis):
    return apply_primitive("softmax", [x], axis=axis)


def log(x):
    return apply_primitive("log", [x])


def clamp_min(x, cmin):
    return apply_primitive("clamp_min", [x], cmin=float(cmin))


def concat(xs, axis):
    return apply_primitive("concat", list(xs), axis=axis)


def slice_axis(x, axis, start, stop):
    return apply_primitive("slice_axis", [x], axis=axis, start=start, stop=stop)


def split(x, sizes, axis):
    parts, at = [], 0
    for s in sizes:
        parts.append(slice_axis(x, axis, at, at + s))
        at += s
    if at != x.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover axis {axis} of {x.shape}")
    return parts


def reshape(x, shape):
    return apply_primitive("reshape", [x], shape=tuple(shape))


def transpose(x, axes):
    return apply_primitive("transpose", [x], axes=tuple(axes))


def reduce_sum(x, axis=None, keepdims=False):
    return apply_primitive("reduce_sum", [x], axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False):
    return apply_primitive("reduce_mean", [x], axis=axis, keepdims=keepdims)


def reduce_max(x, axis, keepdims=False):
    return apply_primitive("reduce_max", [x], axis=axis, keepdims=keepdims)


def maxpool2d(x, kernel, stride, pad=(0, 0), pad_value=-np.inf):
    return apply_primitive(
        "maxpool2d", [x], kernel=tuple(kernel), stride=tuple(stride),
        pad=tuple(pad), pad_value=float(pad_value),
    )


def upsample2x(x):
    return apply_primitive("upsample2x", [x])


def gather_rows(x, idx):
    return apply_primitive("gather_rows", [x], idx=np.ascontiguousarray(idx, dtype=np.int64))


def scatter_project(feats, winner, fill=-np.inf):
    return apply_primitive(
        "scatter_project", [feats],
        winner=np.ascontiguousarray(winner, dtype=np.int64), fill=float(fill),
    )


def where_mask(mask, a, b):
    return apply_primitive("where_mask", [a, b], mask=np.asarray(mask, dtype=bool))


def masked_fill(x, mask, value):
    const = Tensor(np.full(x.shape, value), dtype=x.dtype)
    return where_mask(np.asarray(mask, dtype=bool), const, x)
