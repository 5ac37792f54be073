"""numba kernels; loops run in a fixed sequential order so results are bit-reproducible."""

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(x, k):
    c, b, h, w = x.shape
    p = (k - 1) // 2
    out = np.empty((c, k, k, b, h, w))
    for ch in range(c):
        for i in range(k):
            y0 = max(0, p - i)
            y1 = min(h, h + p - i)
            for j in range(k):
                z0 = max(0, p - j)
                z1 = min(w, w + p - j)
                blk = out[ch, i, j]
                for n in range(b):
                    for y in range(h):
                        if y < y0 or y >= y1:
                            blk[n, y, :] = 0.0
                            continue
                        row = x[ch, n, y + i - p]
                        dst = blk[n, y]
                        for z in range(z0):
                            dst[z] = 0.0
                        for z in range(z0, z1):
                            dst[z] = row[z + j - p]
                        for z in range(z1, w):
                            dst[z] = 0.0
    return out.reshape(c * k * k, b * h * w)


@njit(cache=True)
def _col2im(cols, c, b, h, w, k):
    p = (k - 1) // 2
    g = cols.reshape(c, k, k, b, h, w)
    out = np.zeros((c, b, h, w))
    for ch in range(c):
        for i in range(k):
            y0 = max(0, p - i)
            y1 = min(h, h + p - i)
            for j in range(k):
                z0 = max(0, p - j)
                z1 = min(w, w + p - j)
                for n in range(b):
                    for y in range(y0, y1):
                        src = g[ch, i, j, n, y]
                        dst = out[ch, n, y + i - p]
                        for z in range(z0, z1):
                            dst[z + j - p] += src[z]
    return out


def im2col(x, k):
    """(C, B, H, W) -> (C*k*k, B*H*W); see the numpy version for the layout."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if k == 1:
        c, b, h, w = x.shape
        return x.reshape(c, b * h * w)
    return _im2col(x, k)


def col2im(cols, shape, k):
    c, b, h, w = shape
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if k == 1:
        return cols.reshape(c, b, h, w)
    return _col2im(cols, c, b, h, w, k)


@njit(cache=True)
def _gather(stack, rows, cols, r):
    nk, h, w = stack.shape
    half = (r - 1) // 2
    n = rows.shape[0]
    out = np.empty((n, nk, r, r))
    for s in range(n):
        for i in range(r):
            yy = min(max(rows[s] + i - half, 0), h - 1)
            for j in range(r):
                zz = min(max(cols[s] + j - half, 0), w - 1)
                for ch in range(nk):
                    out[s, ch, i, j] = stack[ch, yy, zz]
    return out


def gather_patches(stack, rows, cols, r):
    return _gather(
        np.ascontiguousarray(stack, dtype=np.float64),
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        r,
    )


@njit(cache=True)
def _memberships(x, v, m, u):
    n = x.shape[0]
    c = v.shape[0]
    e = 1.0 / (m - 1.0)
    d2 = np.empty(c)
    for s in range(n):
        hit = -1
        dmin = np.inf
        for k in range(c):
            d = x[s] - v[k]
            d2[k] = d * d
            if d2[k] == 0.0 and hit < 0:
                hit = k
            if d2[k] < dmin:
                dmin = d2[k]
        if hit >= 0:
            for k in range(c):
                u[s, k] = 0.0
            u[s, hit] = 1.0
            continue
        tot = 0.0
        for k in range(c):
            u[s, k] = dmin / d2[k] if e == 1.0 else (dmin / d2[k]) ** e
            tot += u[s, k]
        for k in range(c):
            u[s, k] /= tot


@njit(cache=True)
def _step(x, v, m):
    n = x.shape[0]
    c = v.shape[0]
    u = np.empty((n, c))
    _memberships(x, v, m, u)
    num = np.zeros(c)
    den = np.zeros(c)
    for s in range(n):
        for k in range(c):
            wk = u[s, k] * u[s, k] if m == 2.0 else u[s, k] ** m
            num[k] += wk * x[s]
            den[k] += wk
    v_new = v.copy()
    for k in range(c):
        if den[k] > 0.0:
            v_new[k] = num[k] / den[k]
    obj = 0.0
    for s in range(n):
        for k in range(c):
            d = x[s] - v_new[k]
            obj += u[s, k] ** m * d * d
    return u, v_new, obj


def fcm_memberships(x, v, m):
    x = np.ascontiguousarray(x, dtype=np.float64)
    u = np.empty((x.shape[0], len(v)))
    _memberships(x, np.asarray(v, dtype=np.float64), float(m), u)
    return u


def fcm_step(x, v, m):
    u, v_new, obj = _step(
        np.ascontiguousarray(x, dtype=np.float64), np.asarray(v, dtype=np.float64), float(m)
    )
    return u, v_new, float(obj)
