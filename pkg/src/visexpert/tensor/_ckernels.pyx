# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, INFINITY

cnp.import_array()


cdef void _im2col(floating[:, :, ::1] x, floating[:, ::1] cols) noexcept nogil:
    cdef Py_ssize_t c, i, j, k
    cdef Py_ssize_t C = x.shape[0], H2 = x.shape[1] // 2, W2 = x.shape[2] // 2
    for i in range(H2):
        for j in range(W2):
            k = i * W2 + j
            for c in range(C):
                cols[k, 4 * c] = x[c, 2 * i, 2 * j]
                cols[k, 4 * c + 1] = x[c, 2 * i, 2 * j + 1]
                cols[k, 4 * c + 2] = x[c, 2 * i + 1, 2 * j]
                cols[k, 4 * c + 3] = x[c, 2 * i + 1, 2 * j + 1]


cdef void _col2im(floating[:, ::1] cols, floating[:, :, ::1] x) noexcept nogil:
    cdef Py_ssize_t c, i, j, k
    cdef Py_ssize_t C = x.shape[0], H2 = x.shape[1] // 2, W2 = x.shape[2] // 2
    for i in range(H2):
        for j in range(W2):
            k = i * W2 + j
            for c in range(C):
                x[c, 2 * i, 2 * j] = cols[k, 4 * c]
                x[c, 2 * i, 2 * j + 1] = cols[k, 4 * c + 1]
                x[c, 2 * i + 1, 2 * j] = cols[k, 4 * c + 2]
                x[c, 2 * i + 1, 2 * j + 1] = cols[k, 4 * c + 3]


def _cols_of(x):
    x = np.ascontiguousarray(x)
    c, h, w = x.shape
    cols = np.empty(((h // 2) * (w // 2), c * 4), dtype=x.dtype)
    if x.dtype == np.float64:
        _im2col[double](x, cols)
    else:
        _im2col[float](x, cols)
    return cols


def conv2x2_s2_forward(x, w, b):
    c, h, wd = x.shape
    o = w.shape[0]
    out = _cols_of(x) @ w.reshape(o, c * 4).T + b
    return np.ascontiguousarray(out.T).reshape(o, h // 2, wd // 2)


def conv2x2_s2_backward(x, w, gout):
    c, h, wd = x.shape
    o = w.shape[0]
    cols = _cols_of(x)
    g2 = gout.reshape(o, -1)
    gw = (g2 @ cols).reshape(w.shape)
    gb = g2.sum(axis=1)
    gcols = np.ascontiguousarray(g2.T @ w.reshape(o, c * 4))
    gx = np.empty((c, h, wd), dtype=x.dtype)
    if x.dtype == np.float64:
        _col2im[double](gcols, gx)
    else:
        _col2im[float](gcols, gx)
    return gx, gw, gb


cdef void _softmax(floating[:, ::1] x, cnp.uint8_t[:, ::1] mask, bint masked,
                   floating[:, ::1] y) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t R = x.shape[0], N = x.shape[1]
    cdef double m, s, e
    for r in range(R):
        m = -INFINITY
        for j in range(N):
            if (not masked or mask[r, j]) and x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(N):
            if not masked or mask[r, j]:
                e = exp(<double>(<floating>(x[r, j] - m)))
                y[r, j] = <floating>e
                s += y[r, j]
            else:
                y[r, j] = 0
        for j in range(N):
            y[r, j] = <floating>(y[r, j] / s)


def softmax_rows(x, mask=None):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    cdef cnp.uint8_t[:, ::1] mv
    if mask is None:
        mv = np.ones((1, 1), dtype=np.uint8)
    else:
        mv = np.ascontiguousarray(mask, dtype=np.uint8)
    if x.dtype == np.float64:
        _softmax[double](x, mv, mask is not None, y)
    else:
        _softmax[float](x, mv, mask is not None, y)
    return y


cdef void _softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy,
                       floating[:, ::1] gx) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef floating dot
    for r in range(y.shape[0]):
        dot = 0
        for j in range(y.shape[1]):
            dot += gy[r, j] * y[r, j]
        for j in range(y.shape[1]):
            gx[r, j] = y[r, j] * (gy[r, j] - dot)


def softmax_rows_backward(y, gy):
    y = np.ascontiguousarray(y)
    gy = np.ascontiguousarray(gy, dtype=y.dtype)
    gx = np.empty_like(y)
    if y.dtype == np.float64:
        _softmax_bwd[double](y, gy, gx)
    else:
        _softmax_bwd[float](y, gy, gx)
    return gx


cdef inline double _sigmoid(double a) noexcept nogil:
    # exp of a non-positive argument only, so no overflow
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


cdef void _gate(floating[::1] a, floating[::1] b, floating[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = <floating>(a[i] * _sigmoid(a[i]) * b[i])


cdef void _gate_bwd(floating[::1] a, floating[::1] b, floating[::1] g,
                    floating[::1] ga, floating[::1] gb) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s
    for i in range(a.shape[0]):
        s = _sigmoid(a[i])
        ga[i] = <floating>(g[i] * b[i] * (s * (1.0 + a[i] * (1.0 - s))))
        gb[i] = <floating>(g[i] * a[i] * s)


def swiglu_gate(a, b):
    shape = a.shape
    a1 = np.ascontiguousarray(a).reshape(-1)
    b1 = np.ascontiguousarray(b, dtype=a.dtype).reshape(-1)
    out = np.empty_like(a1)
    if a1.dtype == np.float64:
        _gate[double](a1, b1, out)
    else:
        _gate[float](a1, b1, out)
    return out.reshape(shape)


def swiglu_gate_backward(a, b, g):
    shape = a.shape
    a1 = np.ascontiguousarray(a).reshape(-1)
    b1 = np.ascontiguousarray(b, dtype=a.dtype).reshape(-1)
    g1 = np.ascontiguousarray(g, dtype=a.dtype).reshape(-1)
    ga = np.empty_like(a1)
    gb = np.empty_like(a1)
    if a1.dtype == np.float64:
        _gate_bwd[double](a1, b1, g1, ga, gb)
    else:
        _gate_bwd[float](a1, b1, g1, ga, gb)
    return ga.reshape(shape), gb.reshape(shape)
