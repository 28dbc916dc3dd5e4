"""Pure-numpy implementations of the hot kernels.

Semantics here are the reference; the compiled core in ``_core.pyx`` must
produce bit-identical results (same scan order, same tie rules) so that the
two backends are interchangeable at import time.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def im2col(x, k, pad):
    """Unfold (C,H,W) into (C*k*k, H*W) patch columns, zero padding, stride 1."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, h * w)
    return np.ascontiguousarray(cols)


def col2im(cols, c, h, w, k, pad):
    """Adjoint of :func:`im2col`: fold patch columns back, summing overlaps."""
    cols = cols.reshape(c, k, k, h, w)
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, di : di + h, dj : dj + w] += cols[:, di, dj]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)


def maxpool2d_forward(x, kh, kw, sh, sw, ph, pw, pad_value):
    """Max pool with explicit pad value.

    Returns (out, arg): ``arg`` holds the flat index into the unpadded input
    of the first window cell attaining the max (row-major window scan), or -1
    when only padding (or nothing strictly above -inf) attains it.
    """
    c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.full((c, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.full((c, ho, wo), -1, dtype=np.int64)
    base = (np.arange(c) * (h * w))[:, None, None]
    for di in range(kh):
        for dj in range(kw):
            ys = di - ph + sh * np.arange(ho)
            xs = dj - pw + sw * np.arange(wo)
            yok = (ys >= 0) & (ys < h)
            xok = (xs >= 0) & (xs < w)
            val = np.full((c, ho, wo), pad_value, dtype=x.dtype)
            sel = np.ix_(np.arange(c), np.flatnonzero(yok), np.flatnonzero(xok))
            val[sel] = x[:, ys[yok], :][:, :, xs[xok]]
            flat = np.full((ho, wo), -1, dtype=np.int64)
            flat[np.ix_(np.flatnonzero(yok), np.flatnonzero(xok))] = (
                ys[yok][:, None] * w + xs[xok][None, :]
            )
            cand = base + flat[None, :, :]
            cand = np.where(flat[None, :, :] < 0, -1, cand)
            better = val > out
            out = np.where(better, val, out)
            arg = np.where(better, cand, arg)
    return out, arg


def maxpool2d_backward(grad_out, arg, c, h, w):
    grad = np.zeros(c * h * w, dtype=grad_out.dtype)
    valid = arg.ravel() >= 0
    np.add.at(grad, arg.ravel()[valid], grad_out.ravel()[valid])
    return grad.reshape(c, h, w)


def _up2x_axis_index(n):
    # source sample positions for 2x upsampling, half-pixel centers
    s = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    w1 = np.clip(s - np.floor(s), 0.0, 1.0)
    w1 = np.where(s < 0, 0.0, w1)
    w1 = np.where(s > n - 1, 0.0, w1)
    return i0, i1, 1.0 - w1, w1


def upsample2x_forward(x):
    """Bilinear 2x upsample of (C,H,W), half-pixel-center convention.

    All arithmetic stays in the input dtype so both backends agree bitwise.
    """
    c, h, w = x.shape
    r0, r1, wr0, wr1 = _up2x_axis_index(h)
    wr0, wr1 = wr0.astype(x.dtype), wr1.astype(x.dtype)
    y = wr0[None, :, None] * x[:, r0, :] + wr1[None, :, None] * x[:, r1, :]
    c0, c1, wc0, wc1 = _up2x_axis_index(w)
    wc0, wc1 = wc0.astype(x.dtype), wc1.astype(x.dtype)
    y = wc0[None, None, :] * y[:, :, c0] + wc1[None, None, :] * y[:, :, c1]
    return np.ascontiguousarray(y)


def upsample2x_backward(g):
    c, h2, w2 = g.shape
    h, w = h2 // 2, w2 // 2
    c0, c1, wc0, wc1 = _up2x_axis_index(w)
    wc0, wc1 = wc0.astype(g.dtype), wc1.astype(g.dtype)
    gw = np.zeros((w, c, h2), dtype=g.dtype)
    gt = np.ascontiguousarray(np.moveaxis(g, 2, 0))  # (W2, C, H2)
    np.add.at(gw, c0, wc0[:, None, None] * gt)
    np.add.at(gw, c1, wc1[:, None, None] * gt)
    r0, r1, wr0, wr1 = _up2x_axis_index(h)
    wr0, wr1 = wr0.astype(g.dtype), wr1.astype(g.dtype)
    gh = np.zeros((h, w, c), dtype=g.dtype)
    gwt = np.ascontiguousarray(np.moveaxis(gw, 2, 0))  # (H2, W, C)
    np.add.at(gh, r0, wr0[:, None, None] * gwt)
    np.add.at(gh, r1, wr1[:, None, None] * gwt)
    return np.ascontiguousarray(gh.transpose(2, 0, 1))


def knn_brute(pos, k, chunk=256):
    """Exact k-NN over (N,3) float64 positions.

    Row i is [i] followed by the k-1 nearest other points ordered by
    (squared distance, index).
    """
    n = pos.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    cols = np.arange(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = ((pos[lo:hi, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = -1.0  # self sorts first
        order = np.lexsort((np.broadcast_to(cols, d2.shape), d2), axis=-1)
        out[lo:hi] = order[:, :k]
    return out


def gather_rows(x, idx):
    return x[idx]


def scatter_add_rows(rows, idx, n):
    out = np.zeros((n,) + rows.shape[1:], dtype=rows.dtype)
    np.add.at(out, idx, rows)
    return out


def project_points(prow, pcol, z, h, w):
    """Per-pixel winner among projected points: max z, ties to lowest index.

    Returns flat (H*W,) int64 winner indices, -1 where no point landed.
    """
    n = prow.shape[0]
    pix = prow * w + pcol
    best_z = np.full(h * w, -np.inf)
    np.maximum.at(best_z, pix, z)
    winner = np.full(h * w, np.iinfo(np.int64).max, dtype=np.int64)
    at_best = z == best_z[pix]
    np.minimum.at(winner, pix[at_best], np.arange(n, dtype=np.int64)[at_best])
    winner[winner == np.iinfo(np.int64).max] = -1
    return winner
