"""Finite-difference checks over every differentiable layer, at toy sizes.

Each case builds fp64 inputs from a fixed seed, wraps the layer in a scalar
readout (a random-weighted sum, or cross-entropy for the decoder) and
returns :func:`grad_check`'s max relative error.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .adapter import AdapterConfig, adapt, init_adapter_params
from .decoder import (ATTN_PROJ, FFN_PROJ, DecoderConfig, MixedSequence, decoder_forward,
                      expert_attention, expert_ffn, init_decoder_params)
from .tensor import Tensor, grad_check, ops, precision
from .vision import VitConfig, init_vit_params, vit_forward

TOLERANCE = 1e-4


def _readout(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.normal(size=out.shape))
    return lambda y: ops.sum(ops.mul(y, r))


def _check_dict(build: Callable[[dict], Tensor], params: dict, rng) -> float:
    names = list(params)
    tensors = [params[n] for n in names]
    ro = _readout(build(params), rng)

    def fn(*ts):
        return ro(build(dict(zip(names, ts))))

    return grad_check(fn, tensors)


def case_matmul(rng):
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
    return grad_check(lambda a, b: ops.sum(ops.matmul(a, b)), [a, b])


def case_conv2x2_s2(rng):
    p = {"x": Tensor(rng.normal(size=(2, 4, 6))), "w": Tensor(rng.normal(size=(3, 2, 2, 2))),
         "b": Tensor(rng.normal(size=3))}
    return _check_dict(lambda p: ops.conv2x2_s2(p["x"], p["w"], p["b"]), p, rng)


def case_swiglu(rng):
    p = {"x": Tensor(rng.normal(size=(3, 4))), "W": Tensor(rng.normal(size=(4, 6))),
         "V": Tensor(rng.normal(size=(4, 6))), "W2": Tensor(rng.normal(size=(6, 2))),
         "bW": Tensor(rng.normal(size=6)), "bV": Tensor(rng.normal(size=6)),
         "b2": Tensor(rng.normal(size=2))}
    return _check_dict(lambda p: ops.swiglu(**p), p, rng)


def case_softmax(rng):
    x = Tensor(rng.normal(size=(3, 5)))
    mask = np.tril(np.ones((3, 5), bool), k=2)
    err_full = _check_dict(lambda p: ops.softmax(p["x"], axis=0), {"x": x}, rng)
    err_mask = _check_dict(lambda p: ops.softmax(p["x"], axis=1, mask=mask), {"x": x}, rng)
    return max(err_full, err_mask)


def case_vit_forward(rng):
    cfg = VitConfig(patch_size=2, embed_dim=8, depth=2, heads=2, grid_h=2, grid_w=2, channels=1)
    params = init_vit_params(cfg, rng)
    params["patches"] = Tensor(rng.random((cfg.n_patches, cfg.patch_dim)))
    return _check_dict(lambda p: vit_forward(p["patches"], cfg, p), params, rng)


def case_adapt(rng):
    cfg = AdapterConfig(in_dim=3, out_dim=4, grid_h=4, grid_w=2, hidden_dim=5)
    params = init_adapter_params(cfg, rng)
    for k in ("adapter.conv.b", "adapter.swiglu.bW", "adapter.swiglu.bV", "adapter.swiglu.b2"):
        params[k] = Tensor(rng.normal(0, 0.3, size=params[k].shape))
    params["features"] = Tensor(rng.normal(size=(8, 3)))
    return _check_dict(lambda p: adapt(p["features"], cfg, p), params, rng)


def _toy_sequence(rng, L=5, d=8):
    vision = np.array([False, True, True, False, True][:L])
    ids = np.where(vision, -1, rng.integers(0, 16, size=L))
    return vision, ids, Tensor(rng.normal(size=(L, d)))


def _expert_params(rng, shapes):
    p = {}
    for kind in ("lang", "vis"):
        for name, shp in shapes.items():
            p[f"{name}.{kind}"] = Tensor(rng.normal(0, 0.5, size=shp))
    return p


def _split(p, names):
    return ({n: p[f"{n}.lang"] for n in names}, {n: p[f"{n}.vis"] for n in names})


def case_expert_attention(rng):
    vision, ids, x = _toy_sequence(rng)
    p = _expert_params(rng, {n: (8, 8) for n in ATTN_PROJ})
    p["x"] = x

    def build(p):
        seq = MixedSequence(p["x"], vision, np.arange(len(vision)), ids)
        lang, vis = _split(p, ATTN_PROJ)
        return expert_attention(seq, lang, vis, heads=2)

    return _check_dict(build, p, rng)


def case_expert_ffn(rng):
    vision, ids, x = _toy_sequence(rng)
    p = _expert_params(rng, {"W": (8, 6), "V": (8, 6), "W2": (6, 8)})
    p["x"] = x

    def build(p):
        seq = MixedSequence(p["x"], vision, np.arange(len(vision)), ids)
        lang, vis = _split(p, FFN_PROJ)
        return expert_ffn(seq, lang, vis)

    return _check_dict(build, p, rng)


def case_decoder_forward(rng):
    cfg = DecoderConfig(visual_expert=True, embed_dim=8, depth=2, heads=2, vocab_size=16,
                        ffn_hidden=12)
    params = init_decoder_params(cfg, rng, vis_from_lang=False)
    for k in params:
        if k.startswith("dec.norm"):
            params[k] = Tensor(1.0 + 0.2 * rng.normal(size=params[k].shape))
    vision, ids, x = _toy_sequence(rng)
    params["x"] = x
    targets = np.array([3, 7, 1, 12, 5])
    names = list(params)

    def fn(*ts):
        p = dict(zip(names, ts))
        seq = MixedSequence(p["x"], vision, np.arange(len(vision)), ids)
        return ops.cross_entropy(decoder_forward(seq, cfg, p), targets)

    return grad_check(fn, [params[n] for n in names])


def case_decoder_shared(rng):
    cfg = DecoderConfig(visual_expert=False, embed_dim=8, depth=1, heads=2, vocab_size=16,
                        ffn_hidden=12)
    params = init_decoder_params(cfg, rng)
    vision, ids, x = _toy_sequence(rng)
    params["x"] = x
    names = list(params)

    def fn(*ts):
        p = dict(zip(names, ts))
        seq = MixedSequence(p["x"], vision, np.arange(len(vision)), ids)
        return ops.cross_entropy(decoder_forward(seq, cfg, p), [2, 9, 4, 4, 0])

    return grad_check(fn, [params[n] for n in names])


def case_norms_and_rope(rng):
    x = Tensor(rng.normal(size=(4, 8)))
    g = Tensor(rng.normal(size=8))
    errs = [
        _check_dict(lambda p: ops.layer_norm(p["x"], p["g"]), {"x": x, "g": g}, rng),
        _check_dict(lambda p: ops.rms_norm(p["x"], p["g"]), {"x": x, "g": g}, rng),
        _check_dict(lambda p: ops.rope(p["x"], np.arange(4), 2), {"x": x}, rng),
        _check_dict(lambda p: ops.gelu(p["x"]), {"x": x}, rng),
    ]
    return max(errs)


CASES: dict[str, Callable] = {
    "matmul": case_matmul,
    "conv2x2_s2": case_conv2x2_s2,
    "swiglu": case_swiglu,
    "softmax": case_softmax,
    "vit_forward": case_vit_forward,
    "adapt": case_adapt,
    "expert_attention": case_expert_attention,
    "expert_ffn": case_expert_ffn,
    "decoder_forward": case_decoder_forward,
    "decoder_shared": case_decoder_shared,
    "norms_rope_gelu": case_norms_and_rope,
}


def run(modules=None, seed: int = 0) -> dict[str, float]:
    """Max relative error per case, all in fp64."""
    names = list(CASES) if modules is None else list(modules)
    out = {}
    with precision("fp64"):
        for name in names:
            rng = np.random.default_rng(seed)
            out[name] = CASES[name](rng)
    return out


def report(results: dict[str, float], elapsed: float | None = None) -> str:
    lines = [f"{name:<18} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}"
             for name, err in results.items()]
    if elapsed is not None:
        lines.append(f"elapsed {elapsed:.1f}s")
    return "\n".join(lines) + "\n"


def timed_run(modules=None):
    t0 = time.perf_counter()
    res = run(modules)
    return res, time.perf_counter() - t0
