"""Pure-Python/numpy fallback for the compiled kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
The conv forward accumulates in (channel, row, col) order per output element,
so it is bit-identical to the compiled version and to a naive loop.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-12


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, stride, padding):
    B, C, H, W = x.shape
    O, C2, kh, kw = w.shape
    xp = _pad(x, padding)
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    hi = stride * (Ho - 1) + 1
    wi = stride * (Wo - 1) + 1
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, c, i:i + hi:stride, j:j + wi:stride]
                out += patch[:, None, :, :] * w[None, :, c, i, j, None, None]
    return out


def conv2d_backward(x, w, gout, stride, padding):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    _, _, Ho, Wo = gout.shape
    xp = _pad(x, padding)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    hi = stride * (Ho - 1) + 1
    wi = stride * (Wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + hi:stride, j:j + wi:stride]
            gw[:, :, i, j] = np.einsum("bohw,bchw->oc", gout, patch)
            gxp[:, :, i:i + hi:stride, j:j + wi:stride] += np.einsum("bohw,oc->bchw", gout, w[:, :, i, j])
    if padding:
        gxp = gxp[:, :, padding:padding + H, padding:padding + W]
    return np.ascontiguousarray(gxp), gw


def _clip(subject, a, b):
    out = []
    n = len(subject)
    if n == 0:
        return out
    ex, ey = b[0] - a[0], b[1] - a[1]
    sides = [ex * (p[1] - a[1]) - ey * (p[0] - a[0]) for p in subject]
    for k in range(n):
        p, q = subject[k], subject[(k + 1) % n]
        sp, sq = sides[k], sides[(k + 1) % n]
        if sp >= -EPS:
            out.append(p)
        if (sp >= -EPS) != (sq >= -EPS):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _area(poly):
    s = 0.0
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def convex_clip_area(a, b):
    """Area of the intersection of two convex counter-clockwise polygons."""
    poly = [(float(p[0]), float(p[1])) for p in a]
    clip = [(float(p[0]), float(p[1])) for p in b]
    m = len(clip)
    for k in range(m):
        poly = _clip(poly, clip[k], clip[(k + 1) % m])
        if len(poly) < 3:
            return 0.0
    area = _area(poly)
    return area if area > EPS else 0.0


def quad_iou_matrix(qa, qb):
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    out = np.zeros((len(qa), len(qb)))
    area_a = [abs(_area(q.tolist())) for q in qa]
    area_b = [abs(_area(q.tolist())) for q in qb]
    for i in range(len(qa)):
        for j in range(len(qb)):
            inter = convex_clip_area(qa[i], qb[j])
            union = area_a[i] + area_b[j] - inter
            out[i, j] = inter / union if union > EPS else 0.0
    return out
