# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``_pykernels``: direct conv2d and convex polygon clipping."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double EPS = 1e-12


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - kw) // stride + 1
    out_arr = np.zeros((B, O, Ho, Wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, r, s, c, i, j, yy, xx
    cdef double acc
    for b in range(B):
        for o in range(O):
            for r in range(Ho):
                for s in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for i in range(kh):
                            yy = r * stride + i - padding
                            for j in range(kw):
                                xx = s * stride + j - padding
                                if yy < 0 or yy >= H or xx < 0 or xx >= W:
                                    # matches the zero-padded numpy path: acc + 0*w
                                    acc = acc + 0.0 * w[o, c, i, j]
                                else:
                                    acc = acc + x[b, c, yy, xx] * w[o, c, i, j]
                    out[b, o, r, s] = acc
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gout, int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    gx_arr = np.zeros((B, C, H, W))
    gw_arr = np.zeros((O, C, kh, kw))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, r, s, c, i, j, yy, xx
    cdef double g
    for b in range(B):
        for o in range(O):
            for r in range(Ho):
                for s in range(Wo):
                    g = gout[b, o, r, s]
                    if g == 0.0:
                        continue
                    for c in range(C):
                        for i in range(kh):
                            yy = r * stride + i - padding
                            if yy < 0 or yy >= H:
                                continue
                            for j in range(kw):
                                xx = s * stride + j - padding
                                if xx < 0 or xx >= W:
                                    continue
                                gw[o, c, i, j] += g * x[b, c, yy, xx]
                                gx[b, c, yy, xx] += g * w[o, c, i, j]
    return gx_arr, gw_arr


cdef int _clip(double* px, double* py, int n, double ax, double ay, double bx, double by,
               double* ox, double* oy) nogil:
    cdef double ex = bx - ax, ey = by - ay
    cdef double sp, sq, t
    cdef int k, kk, m = 0
    cdef bint ip, iq
    for k in range(n):
        kk = k + 1
        if kk == n:
            kk = 0
        sp = ex * (py[k] - ay) - ey * (px[k] - ax)
        sq = ex * (py[kk] - ay) - ey * (px[kk] - ax)
        ip = sp >= -EPS
        iq = sq >= -EPS
        if ip:
            ox[m] = px[k]
            oy[m] = py[k]
            m += 1
        if ip != iq:
            t = sp / (sp - sq)
            ox[m] = px[k] + t * (px[kk] - px[k])
            oy[m] = py[k] + t * (py[kk] - py[k])
            m += 1
    return m


cdef double _signed_area(double* px, double* py, int n) nogil:
    cdef double s = 0.0
    cdef int k, kk
    for k in range(n):
        kk = k + 1
        if kk == n:
            kk = 0
        s += px[k] * py[kk] - px[kk] * py[k]
    return 0.5 * s


# subject polygons never exceed n_a + n_b vertices; 64 is ample for quads
cdef double _clip_area(double* ax, double* ay, int na, double* bx, double* by, int nb) nogil:
    cdef double px[64]
    cdef double py[64]
    cdef double qx[64]
    cdef double qy[64]
    cdef int n = na, k, kk, i
    cdef double area
    for i in range(na):
        px[i] = ax[i]
        py[i] = ay[i]
    for k in range(nb):
        kk = k + 1
        if kk == nb:
            kk = 0
        n = _clip(px, py, n, bx[k], by[k], bx[kk], by[kk], qx, qy)
        if n < 3:
            return 0.0
        for i in range(n):
            px[i] = qx[i]
            py[i] = qy[i]
    area = _signed_area(px, py, n)
    return area if area > EPS else 0.0


def convex_clip_area(a, b):
    """Area of the intersection of two convex counter-clockwise polygons."""
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] Bq = np.ascontiguousarray(b, dtype=np.float64)
    cdef int na = A.shape[0], nb = Bq.shape[0], i
    if na > 16 or nb > 16:
        raise ValueError("polygons with more than 16 vertices are not supported")
    cdef double ax[16]
    cdef double ay[16]
    cdef double bx[16]
    cdef double by[16]
    for i in range(na):
        ax[i] = A[i, 0]
        ay[i] = A[i, 1]
    for i in range(nb):
        bx[i] = Bq[i, 0]
        by[i] = Bq[i, 1]
    return _clip_area(ax, ay, na, bx, by, nb)


def quad_iou_matrix(qa, qb):
    cdef double[:, :, ::1] A = np.ascontiguousarray(qa, dtype=np.float64).reshape(-1, 4, 2)
    cdef double[:, :, ::1] Bq = np.ascontiguousarray(qb, dtype=np.float64).reshape(-1, 4, 2)
    cdef Py_ssize_t n = A.shape[0], m = Bq.shape[0], i, j, k
    out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    area_a_arr = np.zeros(n)
    area_b_arr = np.zeros(m)
    cdef double[::1] area_a = area_a_arr
    cdef double[::1] area_b = area_b_arr
    cdef double ax[4]
    cdef double ay[4]
    cdef double bx[4]
    cdef double by[4]
    cdef double inter, union
    for i in range(n):
        for k in range(4):
            ax[k] = A[i, k, 0]
            ay[k] = A[i, k, 1]
        area_a[i] = abs(_signed_area(ax, ay, 4))
    for j in range(m):
        for k in range(4):
            bx[k] = Bq[j, k, 0]
            by[k] = Bq[j, k, 1]
        area_b[j] = abs(_signed_area(bx, by, 4))
    with nogil:
        for i in range(n):
            for k in range(4):
                ax[k] = A[i, k, 0]
                ay[k] = A[i, k, 1]
            for j in range(m):
                for k in range(4):
                    bx[k] = Bq[j, k, 0]
                    by[k] = Bq[j, k, 1]
                inter = _clip_area(ax, ay, 4, bx, by, 4)
                union = area_a[i] + area_b[j] - inter
                out[i, j] = inter / union if union > EPS else 0.0
    return out_arr
