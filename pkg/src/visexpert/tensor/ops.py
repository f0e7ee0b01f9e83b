"""Differentiable primitives.

Broadcasting is limited to bias-add (a trailing 1-D vector) and Python
scalars; everything else requires identical shapes.
"""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteInput, OddGrid, ShapeMismatch
from . import kernels
from .core import Tensor, record


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return record("add_scalar", a.data + a.data.dtype.type(b), (a,), lambda g: (g,))
    if a.shape == b.shape:
        return record("add", a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.data.ndim - 1))
        return record("add_bias", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise ShapeMismatch(f"add: cannot combine {a.shape} with {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    _same_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return record("scale", a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner extents {a.shape[1]} and {b.shape[0]} differ")
    ad, bd = a.data, b.data
    return record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2-D, got {a.shape}")
    return record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatch(f"reshape: {a.shape} -> {shape} changes element count")
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    dt = a.data.dtype
    return record("sum", np.array([a.data.sum()], dtype=dt), (a,),
                  lambda g: (np.full(shape, g[0], dtype=dt),))


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return record("silu", x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du),)

    return record("gelu", y, (a,), vjp)


def swiglu_gate(a: Tensor, b: Tensor) -> Tensor:
    """silu(a) * b, elementwise."""
    _same_shape(a, b, "swiglu_gate")
    ad, bd = a.data, b.data
    return record("swiglu_gate", kernels.swiglu_gate(ad, bd), (a, b),
                  lambda g: kernels.swiglu_gate_backward(ad, bd, g))


def swiglu(x: Tensor, W: Tensor, V: Tensor, W2: Tensor,
           bW: Tensor | None = None, bV: Tensor | None = None,
           b2: Tensor | None = None) -> Tensor:
    """Gated feed-forward ``(swish(xW) * xV) @ W2`` with optional biases."""
    if W.shape != V.shape:
        raise ShapeMismatch(f"swiglu: W {W.shape} and V {V.shape} differ")
    gate = matmul(x, W)
    val = matmul(x, V)
    if bW is not None:
        gate = add(gate, bW)
    if bV is not None:
        val = add(val, bV)
    out = matmul(swiglu_gate(gate, val), W2)
    if b2 is not None:
        out = add(out, b2)
    return out


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    ``mask`` (boolean, same shape) marks admissible entries; masked entries
    come out exactly 0 and do not take part in the max or the normaliser.
    """
    xd = x.data
    if not np.isfinite(xd).all():
        raise NonFiniteInput("softmax input contains inf or nan")
    axis = axis % xd.ndim
    moved = np.moveaxis(xd, axis, -1)
    shp = moved.shape
    x2 = np.ascontiguousarray(moved).reshape(-1, shp[-1])
    m2 = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != xd.shape:
            raise ShapeMismatch(f"softmax mask {mask.shape} vs input {xd.shape}")
        m2 = np.ascontiguousarray(np.moveaxis(mask, axis, -1)).reshape(-1, shp[-1])
        if not m2.any(axis=1).all():
            raise ShapeMismatch("softmax mask leaves a row with no admissible entry")
    y2 = kernels.softmax_rows(x2, m2)
    y = np.moveaxis(y2.reshape(shp), -1, axis)

    def vjp(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, shp[-1])
        gx = kernels.softmax_rows_backward(y2, g2)
        return (np.moveaxis(gx.reshape(shp), -1, axis),)

    return record("softmax", np.ascontiguousarray(y), (x,), vjp)


def conv2x2_s2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Non-overlapping 2x2 convolution with stride 2 over a [C, H, W] grid."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"conv2x2_s2 expects [C,H,W], got {x.shape}")
    c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise OddGrid(f"conv2x2_s2 needs even H and W, got {h}x{wd}")
    if w.data.ndim != 4 or w.shape[1:] != (c, 2, 2):
        raise ShapeMismatch(f"conv weight {w.shape} incompatible with input channels {c}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv bias {b.shape} vs {w.shape[0]} output channels")
    xd, wdat = x.data, w.data
    out = kernels.conv2x2_s2_forward(xd, wdat, b.data)
    return record("conv2x2_s2", out, (x, w, b),
                  lambda g: kernels.conv2x2_s2_backward(xd, wdat, np.ascontiguousarray(g)))


def _check_norm(x: Tensor, gamma: Tensor, op: str):
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],):
        raise ShapeMismatch(f"{op}: x {x.shape}, scale {gamma.shape}")


def layer_norm(x: Tensor, gamma: Tensor, eps: float = 1e-6) -> Tensor:
    """Mean-centred variance normalisation over the last axis, learned scale only."""
    _check_norm(x, gamma, "layer_norm")
    xd, gd = x.data, gamma.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * rstd

    def vjp(g):
        gx_hat = g * gd
        n = xd.shape[1]
        gx = rstd * (gx_hat - gx_hat.mean(axis=1, keepdims=True)
                     - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True) / n)
        return gx, (g * xhat).sum(axis=0)

    return record("layer_norm", xhat * gd, (x, gamma), vjp)


def rms_norm(x: Tensor, gamma: Tensor, eps: float = 1e-6) -> Tensor:
    """Root-mean-square normalisation over the last axis, learned scale, no bias."""
    _check_norm(x, gamma, "rms_norm")
    xd, gd = x.data, gamma.data
    rinv = 1.0 / np.sqrt((xd * xd).mean(axis=1, keepdims=True) + eps)
    xhat = xd * rinv

    def vjp(g):
        gx_hat = g * gd
        n = xd.shape[1]
        gx = rinv * (gx_hat - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True) / n)
        return gx, (g * xhat).sum(axis=0)

    return record("rms_norm", xhat * gd, (x, gamma), vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Row gather ``table[ids]``; backward scatter-adds in index order."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ShapeMismatch("embedding lookup of zero ids")
    if table.data.ndim != 2 or ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ShapeMismatch(f"embedding ids out of range for table {table.shape}")
    shape = table.shape
    dt = table.data.dtype

    def vjp(g):
        gt = np.zeros(shape, dtype=dt)
        np.add.at(gt, ids, g)
        return (gt,)

    return record("embedding", table.data[ids], (table,), vjp)


def select_rows(take_first, a: Tensor, b: Tensor) -> Tensor:
    """Row ``i`` from ``a`` where ``take_first[i]`` else from ``b``."""
    _same_shape(a, b, "select_rows")
    m = np.asarray(take_first, dtype=bool).reshape(-1)
    if m.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"select_rows mask length {m.shape[0]} vs {a.shape[0]} rows")
    mcol = m.reshape((-1,) + (1,) * (a.data.ndim - 1))
    out = np.where(mcol, a.data, b.data)
    return record("select_rows", out, (a, b),
                  lambda g: (np.where(mcol, g, 0.0).astype(g.dtype), np.where(mcol, 0.0, g).astype(g.dtype)))


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeMismatch(f"columns [{start}:{stop}] of {a.shape}")
    shape = a.shape

    def vjp(g):
        ga = np.zeros(shape, dtype=g.dtype)
        ga[:, start:stop] = g
        return (ga,)

    return record("columns", a.data[:, start:stop].copy(), (a,), vjp)


def _concat(parts, axis: int, name: str) -> Tensor:
    if not parts:
        raise ShapeMismatch(f"{name} of zero tensors")
    arrays = [p.data for p in parts]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"{name}: {exc}") from None
    bounds = np.cumsum([0] + [arr.shape[axis] for arr in arrays])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return record(name, out, tuple(parts), vjp)


def vconcat(parts) -> Tensor:
    """Stack 2-D tensors along rows."""
    return _concat(list(parts), 0, "vconcat")


def hconcat(parts) -> Tensor:
    """Stack 2-D tensors along columns."""
    return _concat(list(parts), 1, "hconcat")


def rope_tables(positions, head_dim: int, base: float = 10000.0, dtype=None):
    if head_dim % 2:
        raise ShapeMismatch(f"rotary embedding needs an even head dim, got {head_dim}")
    half = head_dim // 2
    inv = base ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.asarray(positions, dtype=np.float64).reshape(-1, 1) * inv
    cos, sin = np.cos(ang), np.sin(ang)
    if dtype is not None:
        cos, sin = cos.astype(dtype), sin.astype(dtype)
    return cos, sin


def rope(x: Tensor, positions, n_heads: int) -> Tensor:
    """Rotary position embedding (rotate-half form) applied per head."""
    L, d = x.shape
    if d % n_heads:
        raise ShapeMismatch(f"rope: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    cos, sin = rope_tables(positions, dh, dtype=x.data.dtype)
    if cos.shape[0] != L:
        raise ShapeMismatch(f"rope: {cos.shape[0]} positions for {L} rows")
    half = dh // 2
    xr = x.data.reshape(L, n_heads, 2, half)
    c = cos[:, None, :]
    s = sin[:, None, :]
    out = np.empty_like(xr)
    out[:, :, 0] = xr[:, :, 0] * c - xr[:, :, 1] * s
    out[:, :, 1] = xr[:, :, 1] * c + xr[:, :, 0] * s

    def vjp(g):
        gr = g.reshape(L, n_heads, 2, half)
        gx = np.empty_like(gr)
        gx[:, :, 0] = gr[:, :, 0] * c + gr[:, :, 1] * s
        gx[:, :, 1] = gr[:, :, 1] * c - gr[:, :, 0] * s
        return (gx.reshape(L, d),)

    return record("rope", out.reshape(L, d), (x,), vjp)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean of ``-log softmax(logits)[i, targets[i]]`` over rows."""
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects [L, V] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n = ld.shape[0]
    if t.shape[0] != n:
        raise ShapeMismatch(f"cross_entropy: {t.shape[0]} targets for {n} rows")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    active = w != 0
    if not active.any():
        raise ShapeMismatch("cross_entropy with zero total weight")
    t_safe = np.where(active, t, 0)
    if t_safe.min() < 0 or t_safe.max() >= ld.shape[1]:
        raise ShapeMismatch("cross_entropy target out of vocabulary range")
    p = kernels.softmax_rows(np.ascontiguousarray(ld))
    m = ld.max(axis=1)
    lse = m + np.log(np.exp(ld - m[:, None]).sum(axis=1))
    rows = np.arange(n)
    nll = lse - ld[rows, t_safe]
    total = w.sum()
    wd = (w / total).astype(ld.dtype)
    loss = np.array([(nll * wd).sum()], dtype=ld.dtype)

    def vjp(g):
        gl = p.copy()
        gl[rows, t_safe] -= 1.0
        return (gl * (wd * g[0])[:, None],)

    return record("cross_entropy", loss, (logits,), vjp)
