"""Pure-numpy kernels (fallback path)."""

import numpy as np


def im2col(x, k):
    """(C, B, H, W) -> (C*k*k, B*H*W), zero 'same' padding, row index c*k*k + i*k + j."""
    c, b, h, w = x.shape
    if k == 1:
        return np.ascontiguousarray(x).reshape(c, b * h * w)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty((c, k, k, b, h, w))
    for i in range(k):
        for j in range(k):
            out[:, i, j] = xp[:, :, i : i + h, j : j + w]
    return out.reshape(c * k * k, b * h * w)


def col2im(cols, shape, k):
    """Adjoint of im2col: scatter-add (C*k*k, B*H*W) back onto a (C, B, H, W) grid."""
    c, b, h, w = shape
    if k == 1:
        return np.ascontiguousarray(cols).reshape(c, b, h, w)
    p = (k - 1) // 2
    g = cols.reshape(c, k, k, b, h, w)
    out = np.zeros((c, b, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + h, j : j + w] += g[:, i, j]
    return np.ascontiguousarray(out[:, :, p : p + h, p : p + w])


def gather_patches(stack, rows, cols, r):
    """Clamped (replicate-border) r x r windows of a (K, H, W) stack -> (n, K, r, r)."""
    _, h, w = stack.shape
    half = (r - 1) // 2
    off = np.arange(-half, half + 1)
    rr = np.clip(np.asarray(rows)[:, None] + off, 0, h - 1)
    cc = np.clip(np.asarray(cols)[:, None] + off, 0, w - 1)
    out = stack[:, rr[:, :, None], cc[:, None, :]]  # (K, n, r, r)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def fcm_memberships(x, v, m):
    d2 = (x[:, None] - v[None, :]) ** 2
    u = np.empty_like(d2)
    hit = d2 == 0.0
    exact = hit.any(axis=1)
    if exact.any():
        first = np.argmax(hit[exact], axis=1)
        u[exact] = 0.0
        u[np.flatnonzero(exact), first] = 1.0
    rest = ~exact
    if rest.any():
        dr = d2[rest]
        ratio = (dr.min(axis=1, keepdims=True) / dr) ** (1.0 / (m - 1.0))
        u[rest] = ratio / ratio.sum(axis=1, keepdims=True)
    return u


def fcm_step(x, v, m):
    """Membership update from centers v, then center update; returns (u, v_new, objective)."""
    u = fcm_memberships(x, v, m)
    um = u**m
    den = um.sum(axis=0)
    num = um.T @ x
    v_new = v.copy()
    ok = den > 0.0
    v_new[ok] = num[ok] / den[ok]
    obj = float(np.sum(um * (x[:, None] - v_new[None, :]) ** 2))
    return u, v_new, obj
