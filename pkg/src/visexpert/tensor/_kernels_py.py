"""Pure-numpy reference kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same numerical contract.  Inputs are assumed validated by the caller
(``visexpert.tensor.ops``); these functions do no shape checking.
"""
import numpy as np


def _im2col(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x.reshape(c, h2, 2, w2, 2).transpose(1, 3, 0, 2, 4).reshape(h2 * w2, c * 4)


def _col2im(cols, c, h, w):
    h2, w2 = h // 2, w // 2
    return np.ascontiguousarray(
        cols.reshape(h2, w2, c, 2, 2).transpose(2, 0, 3, 1, 4).reshape(c, h, w)
    )


def conv2x2_s2_forward(x, w, b):
    c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    out = cols @ w.reshape(o, c * 4).T + b
    return np.ascontiguousarray(out.T).reshape(o, h // 2, wd // 2)


def conv2x2_s2_backward(x, w, gout):
    c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    g2 = gout.reshape(o, -1)
    gw = (g2 @ cols).reshape(w.shape)
    gb = g2.sum(axis=1)
    gcols = g2.T @ w.reshape(o, c * 4)
    return _col2im(gcols, c, h, wd), gw, gb


def softmax_rows(x, mask=None):
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    neg = np.where(mask, x, -np.inf)
    z = np.where(mask, x - neg.max(axis=1, keepdims=True), 0.0)
    e = np.where(mask, np.exp(z), 0.0).astype(x.dtype, copy=False)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def swiglu_gate(a, b):
    return a * _sigmoid(a) * b


def swiglu_gate_backward(a, b, g):
    s = _sigmoid(a)
    silu = a * s
    ga = g * b * (s * (1.0 + a * (1.0 - s)))
    gb = g * silu
    return ga, gb
