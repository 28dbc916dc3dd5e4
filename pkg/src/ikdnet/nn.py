"""Small layer helpers over the engine: named parameters, conv/linear/BN blocks.

Parameter creation order is deterministic for a given configuration, and each
parameter draws from its own SeedSequence child, so two builds with the same
seed are bit-identical.
"""

from collections import OrderedDict

import numpy as np

from .engine import Tensor, parameter_init
from .engine import ops

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ParamStore:
    """Registry of named parameters and non-learned buffers (BN statistics)."""

    def __init__(self, seed, dtype=np.float32):
        self.params = OrderedDict()
        self.buffers = OrderedDict()
        self.dtype = dtype
        self._ss = np.random.SeedSequence(seed)

    def new_param(self, name, shape, scheme):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        child = self._ss.spawn(1)[0]  # consumed even for zeros/ones: keeps streams aligned
        t = parameter_init(shape, scheme, child, dtype=self.dtype)
        self.params[name] = t
        return t

    def new_buffer(self, name, array):
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(array, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state_arrays(self):
        """All named arrays (parameters then buffers) for checkpointing."""
        out = OrderedDict((k, v.data) for k, v in self.params.items())
        out.update(self.buffers)
        return out

    def load_state_arrays(self, arrays):
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            src = np.asarray(arrays[name], dtype=self.dtype)
            if src.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint shape {src.shape} != model shape {t.data.shape} for {name!r}"
                )
            t.data = np.ascontiguousarray(src)
        for name in self.buffers:
            if name not in arrays:
                raise KeyError(f"checkpoint is missing buffer {name!r}")
            np.copyto(self.buffers[name], np.asarray(arrays[name], dtype=self.dtype))


class Linear:
    def __init__(self, store, name, in_dim, out_dim):
        self.w = store.new_param(f"{name}.w", (in_dim, out_dim), "fan_uniform")
        self.b = store.new_param(f"{name}.b", (out_dim,), "zeros")

    def __call__(self, x):
        return ops.add(ops.matmul(x, self.w), self.b)


class Conv2d:
    def __init__(self, store, name, cin, cout, k):
        self.w = store.new_param(f"{name}.w", (cout, cin, k, k), "fan_uniform")
        self.b = store.new_param(f"{name}.b", (cout,), "zeros")

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b)


class BatchNorm:
    """Per-channel normalization over every non-channel axis."""

    def __init__(self, store, name, c, axis):
        self.gamma = store.new_param(f"{name}.gamma", (c,), "ones")
        self.beta = store.new_param(f"{name}.beta", (c,), "zeros")
        self.running_mean = store.new_buffer(f"{name}.running_mean", np.zeros(c))
        self.running_var = store.new_buffer(f"{name}.running_var", np.ones(c))
        self.axis = axis

    def __call__(self, x, training):
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            axis=self.axis, eps=BN_EPS, momentum=BN_MOMENTUM, training=training,
        )


class LinearBnRelu:
    """Shared pointwise MLP block for point features (N, D)."""

    def __init__(self, store, name, din, dout):
        self.linear = Linear(store, name, din, dout)
        self.bn = BatchNorm(store, f"{name}.bn", dout, axis=1)

    def __call__(self, x, training):
        return ops.relu(self.bn(self.linear(x), training))


class ConvBnRelu:
    def __init__(self, store, name, cin, cout, k):
        self.conv = Conv2d(store, name, cin, cout, k)
        self.bn = BatchNorm(store, f"{name}.bn", cout, axis=0)

    def __call__(self, x, training):
        return ops.relu(self.bn(self.conv(x), training))


def constant(array, dtype):
    """Non-learned tensor input."""
    return Tensor(np.asarray(array), dtype=dtype)
