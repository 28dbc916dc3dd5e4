"""Array-based kd-tree construction for 3D point sets.

The tree is built here in numpy (cheap, O(N log N)); traversal happens in the
compiled core. Nodes are stored as flat arrays; ``left < 0`` marks a leaf
whose points are ``perm[start : start + count]``. Internal nodes guarantee
``coord[left points, axis] <= split_val <= coord[right points, axis]``, so a
single-plane distance bound is valid for pruning.
"""

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 16


@dataclass
class KdTree:
    split_dim: np.ndarray  # (M,) int32
    split_val: np.ndarray  # (M,) float64
    left: np.ndarray       # (M,) int64, -1 for leaves
    right: np.ndarray      # (M,) int64
    start: np.ndarray      # (M,) int64, leaf slice into perm
    count: np.ndarray      # (M,) int64
    perm: np.ndarray       # (N,) int64


def build_kdtree(pos, leaf_size=LEAF_SIZE):
    pos = np.asarray(pos, dtype=np.float64)
    split_dim, split_val, left, right, start, count = [], [], [], [], [], []
    perm_parts = []
    offset = 0

    def rec(idx):
        nonlocal offset
        node = len(split_dim)
        split_dim.append(0)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        if idx.shape[0] <= leaf_size:
            start[node] = offset
            count[node] = idx.shape[0]
            perm_parts.append(idx)
            offset += idx.shape[0]
            return node
        sub = pos[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        mid = idx.shape[0] // 2
        part = np.argpartition(sub[:, axis], mid)
        split_dim[node] = axis
        split_val[node] = float(sub[part[mid], axis])
        left[node] = rec(idx[part[:mid]])
        right[node] = rec(idx[part[mid:]])
        return node

    rec(np.arange(pos.shape[0], dtype=np.int64))
    return KdTree(
        split_dim=np.asarray(split_dim, dtype=np.int32),
        split_val=np.asarray(split_val, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        perm=np.concatenate(perm_parts),
    )
