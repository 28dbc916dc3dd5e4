"""Reverse-mode differentiation over dense tensors.

A :class:`Tensor` wraps a contiguous numpy array (float32 for training,
float64 for gradient checking). Primitive applications are recorded on the
innermost active :class:`Tape`; :func:`backward` replays the tape once in
reverse and accumulates gradients into the participating leaves.

Only the primitive set the network needs is provided (see ``ops.py`` for the
table); there is no general broadcasting and no dynamic dispatch beyond the
registry.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class ShapeError(ContractViolation):
    """Input shapes do not satisfy the primitive's shape rule."""


class NumericFault(ArithmeticError):
    """A primitive produced NaN/Inf where finite values are required."""


class Tensor:
    """Dense real-valued array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Constant copy: same values, no gradient participation."""
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.dtype)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


class Context:
    """Per-application scratch passed from a primitive's forward to its backward."""

    __slots__ = ("saved", "attrs")

    def __init__(self, attrs):
        self.saved = ()
        self.attrs = attrs

    def save(self, *arrays):
        self.saved = arrays


class Node:
    __slots__ = ("op", "inputs", "output", "ctx")

    def __init__(self, op, inputs, output, ctx):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered record of primitive applications for one logical execution."""

    def __init__(self):
        self.nodes = []
        self._produced = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Primitive:
    __slots__ = ("name", "forward", "backward", "shape_rule", "finite_mode")

    def __init__(self, name, forward, backward, shape_rule, finite_mode):
        self.name = name
        self.forward = forward
        self.backward = backward
        self.shape_rule = shape_rule
        self.finite_mode = finite_mode


REGISTRY: dict[str, Primitive] = {}


def register(name, shape_rule, finite_mode="strict"):
    """Class decorator wiring a primitive's forward/backward into the registry.

    finite_mode: "strict" rejects any non-finite output; "allow_neg_inf"
    permits the -inf hole sentinel used by the projection pipeline.
    """

    def deco(cls):
        REGISTRY[name] = Primitive(
            name, cls.forward, cls.backward, shape_rule, finite_mode
        )
        return cls

    return deco


def _check_finite(name, arr, mode):
    if mode == "strict":
        if not np.isfinite(arr).all():
            raise NumericFault(f"primitive '{name}' produced non-finite values")
    elif mode == "allow_neg_inf":
        if np.isnan(arr).any() or (arr == np.inf).any():
            raise NumericFault(f"primitive '{name}' produced NaN/+inf values")


def apply_primitive(op, inputs, **attrs):
    """Run one primitive over Tensor inputs, recording it on the active tape.

    Raises ShapeError on shape-rule violations (message carries both shapes)
    and NumericFault when the result breaks the finiteness invariant.
    """
    prim = REGISTRY.get(op)
    if prim is None:
        raise ContractViolation(f"unknown primitive '{op}'")
    dtypes = {t.dtype for t in inputs}
    if len(dtypes) > 1:
        raise ContractViolation(f"{op}: mixed input dtypes {sorted(map(str, dtypes))}")
    ctx = Context(attrs)
    out_data = prim.forward(ctx, *(t.data for t in inputs), **attrs)
    _check_finite(op, out_data, prim.finite_mode)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and requires:
        tape.nodes.append(Node(op, tuple(inputs), out, ctx))
        tape._produced.add(id(out))
    return out


def backward(tape, loss):
    """Push d(loss)/d(output)=1 through the tape in reverse.

    Every requires_grad leaf reachable from ``loss`` accumulates its gradient
    additively into ``.grad``. Returns {leaf Tensor: gradient array}.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ContractViolation("backward: loss was not produced under this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    leaf_grads = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        prim = REGISTRY[node.op]
        in_grads = prim.backward(node.ctx, g)
        if len(in_grads) != len(node.inputs):
            raise ContractViolation(f"{node.op}: backward arity mismatch")
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            _check_finite(node.op + ".backward", gi, "strict")
            if id(t) in tape._produced:
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
                leaf_grads[id(t)] = (t, t.grad)
    return {t: g for t, g in leaf_grads.values()}


def primitive_table():
    """Name -> shape rule for every registered primitive."""
    return {name: p.shape_rule for name, p in sorted(REGISTRY.items())}
