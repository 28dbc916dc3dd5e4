# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Mirrors ``numpy_backend`` function by function. Scan orders, accumulation
orders, and tie rules are kept identical so results match the fallback
bit for bit (the extension is compiled with fp-contract disabled).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double

BACKEND_NAME = "cython"


def im2col(floating[:, :, ::1] x, int k, int pad):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ci, di, dj, y, xx, sy, sx, row
    out_np = np.zeros((c * k * k, h * w), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_np
    for ci in range(c):
        for di in range(k):
            for dj in range(k):
                row = (ci * k + di) * k + dj
                for y in range(h):
                    sy = y + di - pad
                    if sy < 0 or sy >= h:
                        continue
                    for xx in range(w):
                        sx = xx + dj - pad
                        if 0 <= sx < w:
                            out[row, y * w + xx] = x[ci, sy, sx]
    return out_np


def col2im(floating[:, ::1] cols, int c, int h, int w, int k, int pad):
    cdef Py_ssize_t ci, di, dj, y, xx, sy, sx, row
    out_np = np.zeros((c, h, w), dtype=np.asarray(cols).dtype)
    cdef floating[:, :, ::1] out = out_np
    # (di, dj) outermost: same per-cell accumulation order as the fallback
    for di in range(k):
        for dj in range(k):
            for ci in range(c):
                row = (ci * k + di) * k + dj
                for y in range(h):
                    sy = y + di - pad
                    if sy < 0 or sy >= h:
                        continue
                    for xx in range(w):
                        sx = xx + dj - pad
                        if 0 <= sx < w:
                            out[ci, sy, sx] += cols[row, y * w + xx]
    return out_np


def maxpool2d_forward(floating[:, :, ::1] x, int kh, int kw, int sh, int sw,
                      int ph, int pw, double pad_value):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t ci, oy, ox, di, dj, sy, sx
    cdef double best, val
    cdef long long besti
    out_np = np.empty((c, ho, wo), dtype=np.asarray(x).dtype)
    arg_np = np.empty((c, ho, wo), dtype=np.int64)
    cdef floating[:, :, ::1] out = out_np
    cdef long long[:, :, ::1] arg = arg_np
    for ci in range(c):
        for oy in range(ho):
            for ox in range(wo):
                best = -np.inf
                besti = -1
                for di in range(kh):
                    sy = oy * sh + di - ph
                    for dj in range(kw):
                        sx = ox * sw + dj - pw
                        if 0 <= sy < h and 0 <= sx < w:
                            val = x[ci, sy, sx]
                            if val > best:
                                best = val
                                besti = ci * h * w + sy * w + sx
                        else:
                            if pad_value > best:
                                best = pad_value
                                besti = -1
                out[ci, oy, ox] = <floating> best
                arg[ci, oy, ox] = besti
    return out_np, arg_np


def maxpool2d_backward(floating[:, :, ::1] grad_out, long long[:, :, ::1] arg,
                       int c, int h, int w):
    cdef Py_ssize_t ci, oy, ox
    cdef long long t
    grad_np = np.zeros(c * h * w, dtype=np.asarray(grad_out).dtype)
    cdef floating[::1] grad = grad_np
    for ci in range(grad_out.shape[0]):
        for oy in range(grad_out.shape[1]):
            for ox in range(grad_out.shape[2]):
                t = arg[ci, oy, ox]
                if t >= 0:
                    grad[t] += grad_out[ci, oy, ox]
    return grad_np.reshape(c, h, w)


def _axis_index(Py_ssize_t n):
    s = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    w1 = np.clip(s - np.floor(s), 0.0, 1.0)
    w1 = np.where(s < 0, 0.0, w1)
    w1 = np.where(s > n - 1, 0.0, w1)
    return i0, i1, 1.0 - w1, w1


def upsample2x_forward(floating[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    dtype = np.asarray(x).dtype
    r0_np, r1_np, wr0_np, wr1_np = _axis_index(h)
    c0_np, c1_np, wc0_np, wc1_np = _axis_index(w)
    cdef long long[::1] r0 = r0_np, r1 = r1_np, c0 = c0_np, c1 = c1_np
    cdef floating[::1] wr0 = wr0_np.astype(dtype), wr1 = wr1_np.astype(dtype)
    cdef floating[::1] wc0 = wc0_np.astype(dtype), wc1 = wc1_np.astype(dtype)
    tmp_np = np.empty((c, 2 * h, w), dtype=dtype)
    out_np = np.empty((c, 2 * h, 2 * w), dtype=dtype)
    cdef floating[:, :, ::1] tmp = tmp_np, out = out_np
    cdef Py_ssize_t ci, oy, ox
    for ci in range(c):
        for oy in range(2 * h):
            for ox in range(w):
                tmp[ci, oy, ox] = wr0[oy] * x[ci, r0[oy], ox] + wr1[oy] * x[ci, r1[oy], ox]
        for oy in range(2 * h):
            for ox in range(2 * w):
                out[ci, oy, ox] = wc0[ox] * tmp[ci, oy, c0[ox]] + wc1[ox] * tmp[ci, oy, c1[ox]]
    return out_np


def upsample2x_backward(floating[:, :, ::1] g):
    cdef Py_ssize_t c = g.shape[0], h2 = g.shape[1], w2 = g.shape[2]
    cdef Py_ssize_t h = h2 // 2, w = w2 // 2
    dtype = np.asarray(g).dtype
    r0_np, r1_np, wr0_np, wr1_np = _axis_index(h)
    c0_np, c1_np, wc0_np, wc1_np = _axis_index(w)
    cdef long long[::1] r0 = r0_np, r1 = r1_np, c0 = c0_np, c1 = c1_np
    cdef floating[::1] wr0 = wr0_np.astype(dtype), wr1 = wr1_np.astype(dtype)
    cdef floating[::1] wc0 = wc0_np.astype(dtype), wc1 = wc1_np.astype(dtype)
    gw_np = np.zeros((c, h2, w), dtype=dtype)
    gh_np = np.zeros((c, h, w), dtype=dtype)
    cdef floating[:, :, ::1] gw = gw_np, gh = gh_np
    cdef Py_ssize_t ci, oy, ox
    # two passes per axis, in the same order as the fallback's np.add.at calls
    for ox in range(w2):
        for ci in range(c):
            for oy in range(h2):
                gw[ci, oy, c0[ox]] += wc0[ox] * g[ci, oy, ox]
    for ox in range(w2):
        for ci in range(c):
            for oy in range(h2):
                gw[ci, oy, c1[ox]] += wc1[ox] * g[ci, oy, ox]
    for oy in range(h2):
        for ci in range(c):
            for ox in range(w):
                gh[ci, r0[oy], ox] += wr0[oy] * gw[ci, oy, ox]
    for oy in range(h2):
        for ci in range(c):
            for ox in range(w):
                gh[ci, r1[oy], ox] += wr1[oy] * gw[ci, oy, ox]
    return gh_np


def scatter_add_rows(floating[:, ::1] rows, long long[::1] idx, Py_ssize_t n):
    cdef Py_ssize_t m = rows.shape[0], d = rows.shape[1], i, j
    out_np = np.zeros((n, d), dtype=np.asarray(rows).dtype)
    cdef floating[:, ::1] out = out_np
    for i in range(m):
        for j in range(d):
            out[idx[i], j] += rows[i, j]
    return out_np


def project_points(long long[::1] prow, long long[::1] pcol, double[::1] z,
                   Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = prow.shape[0], i
    cdef long long pix
    best_np = np.full(h * w, -np.inf)
    win_np = np.full(h * w, -1, dtype=np.int64)
    cdef double[::1] best = best_np
    cdef long long[::1] win = win_np
    for i in range(n):
        pix = prow[i] * w + pcol[i]
        if z[i] > best[pix]:
            best[pix] = z[i]
            win[pix] = i
    return win_np


cdef inline bint _key_less(double d2a, long long ia, double d2b, long long ib) noexcept:
    return d2a < d2b or (d2a == d2b and ia < ib)


cdef void _heap_push(double* hd, long long* hi, Py_ssize_t* cnt,
                     double d2, long long j) noexcept:
    cdef Py_ssize_t pos = cnt[0], parent
    hd[pos] = d2
    hi[pos] = j
    cnt[0] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _key_less(hd[parent], hi[parent], hd[pos], hi[pos]):
            hd[parent], hd[pos] = hd[pos], hd[parent]
            hi[parent], hi[pos] = hi[pos], hi[parent]
            pos = parent
        else:
            break


cdef void _heap_siftdown(double* hd, long long* hi, Py_ssize_t cnt) noexcept:
    cdef Py_ssize_t pos = 0, child
    while True:
        child = 2 * pos + 1
        if child >= cnt:
            break
        if child + 1 < cnt and _key_less(hd[child], hi[child], hd[child + 1], hi[child + 1]):
            child += 1
        if _key_less(hd[pos], hi[pos], hd[child], hi[child]):
            hd[pos], hd[child] = hd[child], hd[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            pos = child
        else:
            break


def kdtree_knn(double[:, ::1] pos, int[::1] split_dim, double[::1] split_val,
               long long[::1] left, long long[::1] right, long long[::1] start,
               long long[::1] count, long long[::1] perm, Py_ssize_t k):
    """Exact self-query k-NN: row i is [i] + (k-1) nearest by (d2, index)."""
    cdef Py_ssize_t n = pos.shape[0], m = split_dim.shape[0]
    cdef Py_ssize_t cap = k - 1
    out_np = np.empty((n, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_np
    cdef Py_ssize_t i, t, sp, cnt, node
    cdef long long j, near, far
    cdef int axis
    cdef double dx, dy, dz, d2, diff, pd2, fd2
    heap_d2_np = np.empty(max(cap, 1))
    heap_id_np = np.empty(max(cap, 1), dtype=np.int64)
    stack_node_np = np.empty(m + 1, dtype=np.int64)
    stack_pd2_np = np.empty(m + 1)
    cdef double[::1] heap_d2 = heap_d2_np, stack_pd2 = stack_pd2_np
    cdef long long[::1] heap_id = heap_id_np, stack_node = stack_node_np
    cdef double* hd = &heap_d2[0]
    cdef long long* hi = &heap_id[0]

    for i in range(n):
        out[i, 0] = i
        if cap == 0:
            continue
        cnt = 0
        stack_node[0] = 0
        stack_pd2[0] = 0.0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_node[sp]
            pd2 = stack_pd2[sp]
            if cnt == cap and pd2 > hd[0]:
                continue
            if left[node] < 0:
                for t in range(start[node], start[node] + count[node]):
                    j = perm[t]
                    if j == i:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    dz = pos[i, 2] - pos[j, 2]
                    d2 = (dx * dx + dy * dy) + dz * dz
                    if cnt < cap:
                        _heap_push(hd, hi, &cnt, d2, j)
                    elif _key_less(d2, j, hd[0], hi[0]):
                        hd[0] = d2
                        hi[0] = j
                        _heap_siftdown(hd, hi, cnt)
            else:
                axis = split_dim[node]
                diff = pos[i, axis] - split_val[node]
                if diff < 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                fd2 = diff * diff
                if fd2 < pd2:
                    fd2 = pd2
                stack_node[sp] = far
                stack_pd2[sp] = fd2
                sp += 1
                stack_node[sp] = near
                stack_pd2[sp] = pd2
                sp += 1
        # pop max repeatedly to emit ascending (d2, index) order
        for t in range(cnt - 1, -1, -1):
            out[i, 1 + t] = hi[0]
            hd[0] = hd[t]
            hi[0] = hi[t]
            _heap_siftdown(hd, hi, t)
    return out_np
