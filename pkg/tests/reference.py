"""Loop-based reference implementations used as independent oracles.

Nothing here calls into visexpert's ops; every contraction is written out
per token (and per head / per key where relevant) over plain float64 numpy
vectors.
"""
import math

import numpy as np


def rms_norm(x, g, eps=1e-6):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        ms = sum(v * v for v in x[i]) / x.shape[1]
        out[i] = x[i] / math.sqrt(ms + eps) * g
    return out


def rope_row(v, pos, n_heads, base=10000.0):
    d = v.shape[0]
    dh = d // n_heads
    half = dh // 2
    out = np.empty_like(v)
    for h in range(n_heads):
        for k in range(half):
            theta = pos * base ** (-k / half)
            a, b = v[h * dh + k], v[h * dh + half + k]
            out[h * dh + k] = a * math.cos(theta) - b * math.sin(theta)
            out[h * dh + half + k] = b * math.cos(theta) + a * math.sin(theta)
    return out


def pick(params, vision_flag):
    return params["vis"] if vision_flag else params["lang"]


def attention(x, vision, lang, vis, n_heads, positions=None):
    """Causal routed attention; ``lang``/``vis`` map q,k,v,o -> [d, d] arrays."""
    L, d = x.shape
    dh = d // n_heads
    positions = np.arange(L) if positions is None else positions
    sets = {"lang": lang, "vis": vis if vis is not None else lang}
    q = np.zeros((L, d)); k = np.zeros((L, d)); v = np.zeros((L, d))
    for i in range(L):
        w = pick(sets, vision[i])
        q[i] = rope_row(x[i] @ w["q"], positions[i], n_heads)
        k[i] = rope_row(x[i] @ w["k"], positions[i], n_heads)
        v[i] = x[i] @ w["v"]
    ctx = np.zeros((L, d))
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(L):
            scores = [float(np.dot(q[i, sl], k[j, sl])) / math.sqrt(dh) for j in range(i + 1)]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for j in range(i + 1):
                ctx[i, sl] += (e[j] / z) * v[j, sl]
    out = np.zeros((L, d))
    for i in range(L):
        out[i] = ctx[i] @ pick(sets, vision[i])["o"]
    return out


def silu(z):
    return z / (1.0 + np.exp(-z))


def ffn(x, vision, lang, vis):
    sets = {"lang": lang, "vis": vis if vis is not None else lang}
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        w = pick(sets, vision[i])
        out[i] = (silu(x[i] @ w["W"]) * (x[i] @ w["V"])) @ w["W2"]
    return out


def decoder(x, vision, params, depth, n_heads, visual_expert):
    """Straight-line reference of the decoder forward pass."""
    P = {k: np.asarray(v.data if hasattr(v, "data") else v, dtype=np.float64) for k, v in params.items()}
    h = np.array(x, dtype=np.float64)
    for l in range(depth):
        def ws(kind, names):
            lang = {n: P[f"dec.{l}.{kind}.{n}.lang"] for n in names}
            vis = {n: P[f"dec.{l}.{kind}.{n}.vis"] for n in names} if visual_expert else None
            return lang, vis
        a_lang, a_vis = ws("attn", "qkvo")
        f_lang, f_vis = ws("ffn", ("W", "V", "W2"))
        h = h + attention(rms_norm(h, P[f"dec.norm.{l}.attn"]), vision, a_lang, a_vis, n_heads)
        h = h + ffn(rms_norm(h, P[f"dec.norm.{l}.ffn"]), vision, f_lang, f_vis)
    h = rms_norm(h, P["dec.norm.final"])
    return h @ P["dec.head"]
