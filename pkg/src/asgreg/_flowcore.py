"""Compiled kernels for the dense flow matcher.

Labels at a pixel are displacements ``w0(p) + (du, dv)`` with ``du, dv`` in
``[-r, r]``; label index ``k = (dv + r) * (2r + 1) + (du + r)``.
"""

import numpy as np
from numba import njit

BIG = np.float32(1e9)


@njit(cache=True, fastmath=True)
def sift_descriptors(cellsum, pad, cell_size, cells, clamp):
    """Assemble normalised descriptors from padded per-cell histograms.

    ``cellsum[pad + y, pad + x]`` holds the orientation histogram of the
    ``cell_size`` square whose top-left pixel is (x, y).
    """
    bins = cellsum.shape[2]
    H = cellsum.shape[0] - 2 * pad
    W = cellsum.shape[1] - 2 * pad
    dim = cells * cells * bins
    out = np.empty((H, W, dim), dtype=np.float32)
    half = cells // 2
    vec = np.empty(dim, dtype=np.float64)
    for y in range(H):
        for x in range(W):
            k = 0
            for i in range(cells):
                row = cellsum[y + (i - half) * cell_size + pad]
                for j in range(cells):
                    xa = x + (j - half) * cell_size + pad
                    for b in range(bins):
                        vec[k] = row[xa, b]
                        k += 1
            s = 0.0
            for k in range(dim):
                s += vec[k] * vec[k]
            if s <= 1e-24:
                for k in range(dim):
                    out[y, x, k] = 0.0
                continue
            inv = 1.0 / np.sqrt(s)
            s = 0.0
            for k in range(dim):
                a = vec[k] * inv
                if a > clamp:
                    a = clamp
                vec[k] = a
                s += a * a
            inv = 1.0 / np.sqrt(s)
            for k in range(dim):
                out[y, x, k] = vec[k] * inv
    return out


@njit(cache=True, fastmath=True)
def data_cost(src, tgt, mask, u0, v0, r, trunc, eta, y0, y1, x0, x1):
    """Truncated-L1 descriptor cost plus displacement penalty on a crop."""
    n = 2 * r + 1
    h, w = y1 - y0, x1 - x0
    th, tw = tgt.shape[0], tgt.shape[1]
    dim = src.shape[2]
    out = np.zeros((h, w, n * n), dtype=np.float32)
    for yy in range(h):
        y = yy + y0
        for xx in range(w):
            x = xx + x0
            if not mask[y, x]:
                continue
            for dv in range(-r, r + 1):
                v = v0[y, x] + dv
                ty = y + v
                for du in range(-r, r + 1):
                    u = u0[y, x] + du
                    tx = x + u
                    k = (dv + r) * n + (du + r)
                    if ty < 0 or ty >= th or tx < 0 or tx >= tw:
                        out[yy, xx, k] = BIG
                        continue
                    s = np.float32(0.0)
                    for c in range(dim):
                        s += abs(src[y, x, c] - tgt[ty, tx, c])
                    if s > trunc:
                        s = trunc
                    out[yy, xx, k] = s + eta * (abs(u) + abs(v))
    return out


@njit(cache=True, fastmath=True)
def _dt_line(tmp, f, out, off, n, alpha, d, shift):
    """1D truncated-L1 min-convolution evaluated at shifted positions.

    out[off + j] = min_i tmp[i] + min(alpha * |i - (j - shift)|, d);
    ``f`` is scratch of length n.
    """
    hmin = tmp[0]
    for i in range(n):
        f[i] = tmp[i]
        if tmp[i] < hmin:
            hmin = tmp[i]
    for i in range(1, n):
        c = f[i - 1] + alpha
        if c < f[i]:
            f[i] = c
    for i in range(n - 2, -1, -1):
        c = f[i + 1] + alpha
        if c < f[i]:
            f[i] = c
    cap = hmin + d
    for j in range(n):
        y = j - shift
        if y < 0:
            val = f[0] + alpha * (-y)
        elif y > n - 1:
            val = f[n - 1] + alpha * (y - (n - 1))
        else:
            val = f[y]
        out[off + j] = val if val < cap else cap


@njit(cache=True, fastmath=True)
def _message(h, cu, cv, n, alpha, d, out, tmp, f, mid, col):
    """Min-sum message for separable truncated-L1 smoothness.

    ``cu, cv`` is the difference of window centres (sender minus receiver).
    """
    for dv in range(n):
        for i in range(n):
            tmp[i] = h[dv * n + i]
        _dt_line(tmp, f, mid, dv * n, n, alpha, d, cu)
    for du in range(n):
        for i in range(n):
            tmp[i] = mid[i * n + du]
        _dt_line(tmp, f, col, 0, n, alpha, d, cv)
        for j in range(n):
            out[j * n + du] = col[j]
    m = out[0]
    for k in range(n * n):
        if out[k] < m:
            m = out[k]
    for k in range(n * n):
        out[k] -= m


@njit(cache=True, fastmath=True)
def belief_propagation(D, active, u0, v0, r, alpha, d, iterations):
    """Sequential min-sum BP on the 4-connected grid; returns label indices.

    One iteration sweeps messages rightward and leftward along every row,
    then downward and upward along every column. Only edges joining two
    ``active`` pixels carry messages.
    """
    h, w, L = D.shape
    # messages are stored only for active pixels
    idx = np.full((h, w), -1, dtype=np.int64)
    na = 0
    for y in range(h):
        for x in range(w):
            if active[y, x]:
                idx[y, x] = na
                na += 1
    ml = np.zeros((na, L), dtype=np.float32)  # incoming from the left neighbour
    mr = np.zeros((na, L), dtype=np.float32)
    mu = np.zeros((na, L), dtype=np.float32)  # incoming from the pixel above
    md = np.zeros((na, L), dtype=np.float32)
    n = 2 * r + 1
    buf = np.empty(L, dtype=np.float32)
    msg = np.empty(L, dtype=np.float32)
    mid = np.empty(L, dtype=np.float32)
    tmp = np.empty(n, dtype=np.float32)
    f = np.empty(n, dtype=np.float32)
    col = np.empty(n, dtype=np.float32)
    for _ in range(iterations):
        for y in range(h):
            for x in range(1, w):
                a, b = idx[y, x], idx[y, x - 1]
                if a < 0 or b < 0:
                    continue
                for k in range(L):
                    buf[k] = D[y, x - 1, k] + ml[b, k] + mu[b, k] + md[b, k]
                _message(buf, u0[y, x - 1] - u0[y, x], v0[y, x - 1] - v0[y, x], n, alpha, d, msg, tmp, f, mid, col)
                for k in range(L):
                    ml[a, k] = msg[k]
            for x in range(w - 2, -1, -1):
                a, b = idx[y, x], idx[y, x + 1]
                if a < 0 or b < 0:
                    continue
                for k in range(L):
                    buf[k] = D[y, x + 1, k] + mr[b, k] + mu[b, k] + md[b, k]
                _message(buf, u0[y, x + 1] - u0[y, x], v0[y, x + 1] - v0[y, x], n, alpha, d, msg, tmp, f, mid, col)
                for k in range(L):
                    mr[a, k] = msg[k]
        for x in range(w):
            for y in range(1, h):
                a, b = idx[y, x], idx[y - 1, x]
                if a < 0 or b < 0:
                    continue
                for k in range(L):
                    buf[k] = D[y - 1, x, k] + ml[b, k] + mr[b, k] + mu[b, k]
                _message(buf, u0[y - 1, x] - u0[y, x], v0[y - 1, x] - v0[y, x], n, alpha, d, msg, tmp, f, mid, col)
                for k in range(L):
                    mu[a, k] = msg[k]
            for y in range(h - 2, -1, -1):
                a, b = idx[y, x], idx[y + 1, x]
                if a < 0 or b < 0:
                    continue
                for k in range(L):
                    buf[k] = D[y + 1, x, k] + ml[b, k] + mr[b, k] + md[b, k]
                _message(buf, u0[y + 1, x] - u0[y, x], v0[y + 1, x] - v0[y, x], n, alpha, d, msg, tmp, f, mid, col)
                for k in range(L):
                    md[a, k] = msg[k]
    labels = np.empty((h, w), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            a = idx[y, x]
            best = BIG * 8
            bk = 0
            for k in range(L):
                b = D[y, x, k]
                if a >= 0:
                    b += ml[a, k] + mr[a, k] + mu[a, k] + md[a, k]
                if b < best:
                    best = b
                    bk = k
            labels[y, x] = bk
    return labels
