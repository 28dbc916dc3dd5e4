"""Deterministic parameter initialization."""

import numpy as np

from .autodiff import DEFAULT_DTYPE, ContractViolation, Tensor

SCHEMES = ("fan_uniform", "zeros", "ones")


def _fans(shape):
    if len(shape) == 2:           # dense: (in, out)
        return shape[0], shape[1]
    if len(shape) == 4:           # conv: (out, in, k, k)
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    n = int(np.prod(shape))
    return n, n


def parameter_init(shape, scheme, seed, dtype=DEFAULT_DTYPE, requires_grad=True):
    """Create a parameter tensor; bit-identical for equal (shape, scheme, seed).

    ``fan_uniform`` draws from +-sqrt(6 / (fan_in + fan_out)); ``seed`` may be
    an int or a numpy SeedSequence.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif scheme == "ones":
        data = np.ones(shape, dtype=dtype)
    elif scheme == "fan_uniform":
        fan_in, fan_out = _fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        rng = np.random.default_rng(seed)
        data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    else:
        raise ContractViolation(f"unknown init scheme {scheme!r}, expected one of {SCHEMES}")
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)
