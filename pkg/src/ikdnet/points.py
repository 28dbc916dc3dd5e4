"""The 3D stream: neighborhood encoding, attention pooling, random downsampling.

Feature widths double per encoder stage from the initial lift width; point
counts shrink 4x per stage so that projected maps match the image branch
resolution at equal depth.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import ContractViolation, Tensor
from .engine import ops
from .nn import Linear, LinearBnRelu, ParamStore


@dataclass
class PointCloud:
    """N points with attributes in network units (intensity/return in [0,1])."""

    xyz: np.ndarray            # (N,3) float64, meters
    intensity: np.ndarray     # (N,) float32
    return_number: np.ndarray  # (N,) float32
    labels: np.ndarray = None  # (N,) int64 or None

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32)
        self.return_number = np.ascontiguousarray(self.return_number, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        n = self.xyz.shape[0]
        if n < 1 or self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise ContractViolation(f"point cloud must be (N>=1, 3), got {self.xyz.shape}")
        if not np.isfinite(self.xyz).all():
            raise ContractViolation("point coordinates must be finite")
        for name, arr in (("intensity", self.intensity),
                          ("return_number", self.return_number)):
            if arr.shape != (n,):
                raise ContractViolation(f"{name} must be (N,), got {arr.shape}")
        if self.labels is not None and self.labels.shape != (n,):
            raise ContractViolation(f"labels must be (N,), got {self.labels.shape}")

    def __len__(self):
        return self.xyz.shape[0]

    def validate_labels(self, num_classes):
        if self.labels is None:
            raise ContractViolation("point cloud has no labels")
        if self.labels.min() < 0 or self.labels.max() >= num_classes:
            raise ContractViolation(
                f"point labels outside [0, {num_classes}): "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def select(self, idx):
        return PointCloud(
            xyz=self.xyz[idx],
            intensity=self.intensity[idx],
            return_number=self.return_number[idx],
            labels=None if self.labels is None else self.labels[idx],
        )


@dataclass
class SamplingTrace:
    """Downsampling record: which points were kept, and for every input point
    the slot (index into the kept list) of its nearest kept point."""

    kept: np.ndarray          # (M,) int64, sorted, unique
    nearest_kept: np.ndarray  # (N,) int64 slots into kept

    def __post_init__(self):
        self.kept = np.ascontiguousarray(self.kept, dtype=np.int64)
        self.nearest_kept = np.ascontiguousarray(self.nearest_kept, dtype=np.int64)


def knn_search(pos, k):
    """Exact Euclidean k-NN; row i starts with i, ties broken by lower index."""
    pos = np.asarray(pos, dtype=np.float64)
    if k < 1 or k > pos.shape[0]:
        raise ContractViolation(f"knn_search: K={k} not in [1, N={pos.shape[0]}]")
    return kernels.knn_points(pos, k)


def nearest_kept(pos, kept, chunk=1024):
    """Slot of the nearest kept point for every point; kept points map to
    their own slot (ties elsewhere go to the lower original index)."""
    pos = np.asarray(pos, dtype=np.float64)
    kpos = pos[kept]
    n = pos.shape[0]
    out = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = ((pos[lo:hi, None, :] - kpos[None, :, :]) ** 2).sum(axis=-1)
        out[lo:hi] = np.argmin(d2, axis=1)  # first min = lowest kept index
    out[kept] = np.arange(kept.shape[0])
    return out


def random_downsample(pos, ratio, seed):
    """Keep floor(N/ratio) points uniformly without replacement (seeded)."""
    pos = np.asarray(pos, dtype=np.float64)
    n = pos.shape[0]
    if ratio < 1 or n < ratio:
        raise ContractViolation(f"random_downsample: N={n} < ratio={ratio}")
    if ratio == 1:
        kept = np.arange(n, dtype=np.int64)
        return SamplingTrace(kept=kept, nearest_kept=kept.copy())
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(n, size=n // ratio, replace=False)).astype(np.int64)
    return SamplingTrace(kept=kept, nearest_kept=nearest_kept(pos, kept))


def relative_encoding(pos, neighbors):
    """Raw 10-vector per (point, neighbor): center, neighbor, offset, distance."""
    pos = np.asarray(pos, dtype=np.float64)
    n, k = neighbors.shape
    pi = np.repeat(pos[:, None, :], k, axis=1)         # (N,K,3)
    pk = pos[neighbors.reshape(-1)].reshape(n, k, 3)
    diff = pi - pk
    dist = np.sqrt((diff ** 2).sum(axis=-1, keepdims=True))
    return np.concatenate([pi, pk, diff, dist], axis=-1)  # (N,K,10)


class AttentionPool:
    """Score each neighbor with a shared linear map, softmax over the
    neighborhood, and sum: output is a convex combination of neighbor rows."""

    def __init__(self, store, name, dim):
        self.score = Linear(store, name, dim, 1)

    def __call__(self, feats):
        n, k, d = feats.shape
        flat = ops.reshape(feats, (n * k, d))
        scores = ops.reshape(self.score(flat), (n, k))
        weights = ops.reshape(ops.softmax(scores, axis=1), (n, k, 1))
        return ops.reduce_sum(ops.mul(feats, weights), axis=1)


class LfaBlock:
    """One aggregation stage: neighborhood geometry encoding, concat with
    gathered neighbor features, attention pooling, residual projection."""

    def __init__(self, store, name, in_dim, out_dim):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.enc_mlp = LinearBnRelu(store, f"{name}.enc", 10, in_dim)
        self.pool = AttentionPool(store, f"{name}.score", 2 * in_dim)
        self.post = LinearBnRelu(store, f"{name}.post", 2 * in_dim, out_dim)
        self.shortcut = LinearBnRelu(store, f"{name}.shortcut", in_dim, out_dim)

    def __call__(self, pos, feats, neighbors, training):
        n, k = neighbors.shape
        enc_raw = relative_encoding(pos, neighbors).reshape(n * k, 10)
        enc = self.enc_mlp(Tensor(enc_raw, dtype=feats.dtype), training)
        enc = ops.reshape(enc, (n, k, self.in_dim))
        nb = ops.gather_rows(feats, neighbors.reshape(-1))
        nb = ops.reshape(nb, (n, k, self.in_dim))
        pooled = self.pool(ops.concat([enc, nb], axis=2))
        return ops.relu(
            ops.add(self.post(pooled, training), self.shortcut(feats, training))
        )


class DecoderStage:
    """Nearest-kept interpolation back to the finer stage, skip concat, MLP."""

    def __init__(self, store, name, in_dim, skip_dim, out_dim):
        self.mlp = LinearBnRelu(store, f"{name}.mlp", in_dim + skip_dim, out_dim)

    def __call__(self, coarse, trace, skip, training):
        if coarse.shape[0] != trace.kept.shape[0]:
            raise ContractViolation(
                f"decode: {coarse.shape[0]} coarse rows vs trace of {trace.kept.shape[0]} kept"
            )
        up = ops.gather_rows(coarse, trace.nearest_kept)
        return self.mlp(ops.concat([up, skip], axis=1), training)


class PointBranch:
    """Full 3D stream: initial lift, `depth` LFA+downsample stages, mirrored
    interpolation decoder, per-point class head.

    Per-depth decoder features (and matching positions) are exposed so the
    caller can project them onto the image grid at the same depth.
    """

    RATIO = 4

    def __init__(self, store, name, num_classes, depth=4, base_width=8,
                 k_neighbors=16, in_attrs=5):
        self.depth = depth
        self.k = k_neighbors
        widths = [base_width * (2 ** s) for s in range(depth + 1)]  # 8,16,32,64,128
        self.widths = widths
        self.initial = LinearBnRelu(store, f"{name}.initial", in_attrs, widths[0])
        self.lfa = [
            LfaBlock(store, f"{name}.lfa{s}", widths[s], widths[s + 1])
            for s in range(depth)
        ]
        self.dec = [
            DecoderStage(store, f"{name}.dec{d}", widths[d + 1], widths[d], widths[d])
            for d in range(depth)
        ]
        self.head = Linear(store, f"{name}.head", widths[0], num_classes)

    def stage_counts(self, n):
        counts = [n]
        for _ in range(self.depth):
            counts.append(counts[-1] // self.RATIO)
        return counts

    def forward(self, pos, attrs, training, sample_seed):
        """pos: (N,3) tile-relative meters; attrs: (N,F) network-unit features.

        Returns dict with per-depth decoder features/positions, point logits,
        and the sampling traces (depth d has floor(N/4^d) points).
        """
        n = pos.shape[0]
        if n < self.RATIO ** self.depth:
            raise ContractViolation(
                f"point branch needs N >= {self.RATIO ** self.depth}, got {n}"
            )
        ss = np.random.SeedSequence(sample_seed)
        stage_seeds = ss.spawn(self.depth)
        feats = self.initial(attrs, training)
        positions = [pos]
        skips = [feats]
        traces = []
        cur_pos = pos
        for s in range(self.depth):
            k = min(self.k, cur_pos.shape[0])
            neighbors = knn_search(cur_pos, k)
            feats = self.lfa[s](cur_pos, feats, neighbors, training)
            trace = random_downsample(cur_pos, self.RATIO, stage_seeds[s])
            traces.append(trace)
            feats = ops.gather_rows(feats, trace.kept)
            cur_pos = cur_pos[trace.kept]
            positions.append(cur_pos)
            skips.append(feats)
        dec_feats = {self.depth: feats}
        x = feats
        for d in range(self.depth - 1, -1, -1):
            x = self.dec[d](x, traces[d], skips[d], training)
            dec_feats[d] = x
        logits = self.head(x)
        return {
            "logits": logits,
            "dec_feats": dec_feats,
            "positions": positions,
            "traces": traces,
        }
