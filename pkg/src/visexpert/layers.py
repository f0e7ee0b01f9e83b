"""Building blocks shared by the encoder and the decoder."""
from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor, default_dtype, ops


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, zero: bool = False) -> Tensor:
    if zero:
        return Tensor(np.zeros((fan_in, fan_out)))
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))


def causal_mask(L: int) -> np.ndarray:
    return np.tril(np.ones((L, L), dtype=bool))


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                        mask: np.ndarray | None = None,
                        weights_out: list | None = None) -> Tensor:
    """Scaled dot-product attention over [L, d] projections split into heads.

    ``mask[i, j]`` True lets query ``i`` see key ``j``.  When ``weights_out``
    is a list, each head's [L, L] attention matrix is appended to it.
    """
    L, d = q.shape
    if k.shape != (L, d) or v.shape != (L, d):
        raise ShapeMismatch(f"attention q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    if d % n_heads:
        raise ShapeMismatch(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    full_mask = None if mask is None else np.broadcast_to(mask, (L, L))
    heads = []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = ops.columns(q, lo, hi) if n_heads > 1 else q
        kh = ops.columns(k, lo, hi) if n_heads > 1 else k
        vh = ops.columns(v, lo, hi) if n_heads > 1 else v
        scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(dh))
        p = ops.softmax(scores, axis=1, mask=full_mask)
        if weights_out is not None:
            weights_out.append(p.data.copy())
        heads.append(ops.matmul(p, vh))
    return heads[0] if n_heads == 1 else ops.hconcat(heads)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def as_param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=default_dtype()))
