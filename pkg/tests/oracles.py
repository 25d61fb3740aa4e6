"""Independent reference computations used by the tests.

Nothing here shares code with the package beyond ``rect_to_quad`` for
corner positions; each oracle is deliberately the slow, obvious version.
"""
from __future__ import annotations

import math

import numpy as np

from graspkit.geom import GraspRect, rect_to_quad


def inside_convex(px, py, quad) -> np.ndarray:
    """Boolean mask of points inside a counter-clockwise convex polygon."""
    ok = np.ones(px.shape, dtype=bool)
    n = len(quad)
    for i in range(n):
        x0, y0 = quad[i]
        x1, y1 = quad[(i + 1) % n]
        ok &= (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) >= 0
    return ok


def mc_jaccard(a: GraspRect, b: GraspRect, n_side: int = 1000, seed: int = 0) -> float:
    """Jaccard by jittered-grid sampling of ``n_side**2`` points over the pair's bounding box."""
    qa, qb = rect_to_quad(a), rect_to_quad(b)
    pts = np.vstack([qa, qb])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    g = (np.arange(n_side)[None, :] + rng.random((n_side, n_side))) / n_side
    h = (np.arange(n_side)[:, None] + rng.random((n_side, n_side))) / n_side
    px = lo[0] + g * (hi[0] - lo[0])
    py = lo[1] + h * (hi[1] - lo[1])
    ia = inside_convex(px, py, qa)
    ib = inside_convex(px, py, qb)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def naive_conv2d(x, w, stride, padding):
    """Direct loops; each output sums in (channel, row, col) order starting from 0.0."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding:padding + H, padding:padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for r in range(Ho):
                for c in range(Wo):
                    acc = 0.0
                    for ch in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[b, ch, r * stride + i, c * stride + j] * w[o, ch, i, j]
                    out[b, o, r, c] = acc
    return out


def grouped_attention(q, k, v, bias_table, H, W, m, shift):
    """Shifted-window attention computed on the unshifted grid.

    Two tokens attend to each other iff they fall in the same window after the
    cyclic shift and neither or both wrapped around along each axis. Bias is
    looked up from the tokens' original (row, col) offsets.
    ``q, k, v``: ``[heads, H*W, d]``; returns the same shape.
    """
    heads, N, d = q.shape
    rows, cols = np.divmod(np.arange(N), W)
    key = {}
    for t in range(N):
        r, c = rows[t], cols[t]
        g = (((r - shift) % H) // m, ((c - shift) % W) // m, r < shift, c < shift)
        key.setdefault(g, []).append(t)
    out = np.zeros_like(v)
    for members in key.values():
        idx = np.array(members)
        for hd in range(heads):
            s = q[hd, idx] @ k[hd, idx].T / math.sqrt(d)
            for a_i, a in enumerate(idx):
                for b_i, b in enumerate(idx):
                    dr = rows[a] - rows[b] + m - 1
                    dc = cols[a] - cols[b] + m - 1
                    s[a_i, b_i] += bias_table[dr * (2 * m - 1) + dc, hd]
            s = s - s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            out[hd, idx] = p @ v[hd, idx]
    return out


def random_rect(rng, span=10.0, size=(0.5, 6.0), category=0) -> GraspRect:
    return GraspRect(rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(*size), rng.uniform(*size),
                     rng.uniform(0, 180), category)


def overlapping_pair(rng):
    a = random_rect(rng, span=2.0, size=(1.0, 5.0))
    b = random_rect(rng, span=2.0, size=(1.0, 5.0))
    return a, b


def best_rect_fit_error(quad) -> float:
    """Smallest achievable max vertex error of any rectangle fitted to ``quad`` (Nelder-Mead, multi-start)."""
    from scipy.optimize import minimize

    q = np.asarray(quad, dtype=np.float64)

    def err(p):
        r = GraspRect(p[0], p[1], abs(p[2]) + 1e-9, abs(p[3]) + 1e-9, p[4] % 180.0)
        return np.abs(rect_to_quad(r) - q).max()

    c = q.mean(axis=0)
    w0, h0 = np.linalg.norm(q[1] - q[0]), np.linalg.norm(q[2] - q[1])
    opts = {"xatol": 1e-9, "fatol": 1e-9, "maxiter": 20000}
    return min(minimize(err, [c[0], c[1], w0, h0, t], method="Nelder-Mead", options=opts).fun
               for t in range(0, 180, 15))
