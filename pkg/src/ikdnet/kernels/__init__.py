"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when present; set ``IKDNET_KERNELS`` to
``numpy`` or ``cython`` to force a backend (``cython`` raises if the
extension is missing). Both backends implement identical semantics, so the
choice affects speed only; ``benchmarks/bench_kernels.py`` compares them.
"""

import os

import numpy as np

from . import numpy_backend
from .kdtree import build_kdtree

_requested = os.environ.get("IKDNET_KERNELS", "auto").lower()
if _requested not in ("auto", "numpy", "cython"):
    raise ValueError(f"IKDNET_KERNELS must be auto|numpy|cython, got {_requested!r}")

_impl = numpy_backend
if _requested in ("auto", "cython"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "IKDNET_KERNELS=cython but the compiled core is not built; "
                "reinstall with the extension or use IKDNET_KERNELS=numpy"
            ) from None

BACKEND = _impl.BACKEND_NAME

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
upsample2x_forward = _impl.upsample2x_forward
upsample2x_backward = _impl.upsample2x_backward
scatter_add_rows = _impl.scatter_add_rows
project_points = _impl.project_points
gather_rows = numpy_backend.gather_rows  # fancy indexing, already native speed

# Below this size a tree buys nothing; the exact (d2, index) ordering makes
# both paths return the same rows.
_KDTREE_MIN_POINTS = 129


def knn_points(pos, k):
    """Exact 3D k-NN, self first, then ascending (squared distance, index)."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    n = pos.shape[0]
    if k > n:
        raise ValueError(f"knn: k={k} exceeds point count {n}")
    if BACKEND == "cython" and n >= _KDTREE_MIN_POINTS:
        tree = build_kdtree(pos)
        return _impl.kdtree_knn(
            pos, tree.split_dim, tree.split_val, tree.left, tree.right,
            tree.start, tree.count, tree.perm, k,
        )
    return numpy_backend.knn_brute(pos, k)
