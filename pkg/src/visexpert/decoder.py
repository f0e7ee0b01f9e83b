"""Causal decoder over mixed text/vision sequences with per-token expert routing.

With ``visual_expert=True`` every vision-tagged position uses its own Q/K/V/O
projections and FFN weights (the ``.vis`` tensors) while text positions keep
the language weights.  With ``visual_expert=False`` one weight set serves all
positions.  Blocks are pre-norm (RMS norm, learned scale), positions are
sequential over the mixed sequence and enter through rotary embeddings.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimMismatch, InvalidSequence, ShapeMismatch
from .layers import causal_mask, init_weight, multihead_attention
from .tensor import Tensor, ops
from .tokenizer import VOCAB_SIZE


class Modality(str, Enum):
    TEXT = "T"
    VISION = "V"


@dataclass(frozen=True)
class MixedSequence:
    """Decoder input: ``[L, d]`` embeddings plus a per-position modality tag.

    ``vision[i]`` is True for vision tokens.  ``token_ids[i]`` holds the text
    token id, or -1 at vision positions.
    """

    embeddings: Tensor
    vision: np.ndarray
    positions: np.ndarray
    token_ids: np.ndarray

    def __post_init__(self):
        L = self.embeddings.shape[0]
        vision = np.asarray(self.vision, dtype=bool).reshape(-1)
        positions = np.asarray(self.positions, dtype=np.int64).reshape(-1)
        token_ids = np.asarray(self.token_ids, dtype=np.int64).reshape(-1)
        if self.embeddings.data.ndim != 2:
            raise InvalidSequence(f"embeddings must be [L, d], got {self.embeddings.shape}")
        if not (vision.size == positions.size == token_ids.size == L):
            raise InvalidSequence("embeddings, modality mask and positions differ in length")
        if not np.array_equal(positions, np.arange(L)):
            raise InvalidSequence("positions must run 0..L-1")
        if np.any(token_ids[vision] != -1) or np.any(token_ids[~vision] < 0):
            raise InvalidSequence("token_ids must be -1 exactly at vision positions")
        object.__setattr__(self, "vision", vision)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "token_ids", token_ids)

    def __len__(self):
        return self.embeddings.shape[0]

    @property
    def mask(self) -> list[Modality]:
        return [Modality.VISION if v else Modality.TEXT for v in self.vision]

    def mask_string(self) -> str:
        return "".join(m.value for m in self.mask)

    def with_embeddings(self, emb: Tensor) -> "MixedSequence":
        return dataclasses.replace(self, embeddings=emb)


def text_fragment(token_ids, embed: Tensor) -> MixedSequence:
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    return MixedSequence(ops.embedding(embed, ids), np.zeros(ids.size, bool),
                         np.arange(ids.size), ids)


def vision_fragment(features: Tensor) -> MixedSequence:
    n = features.shape[0]
    return MixedSequence(features, np.ones(n, bool), np.arange(n), np.full(n, -1))


def concat_sequences(parts) -> MixedSequence:
    parts = [p for p in parts if p is not None]
    if not parts:
        raise InvalidSequence("cannot build an empty sequence")
    widths = {p.embeddings.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimMismatch(f"fragment widths differ: {sorted(widths)}")
    emb = parts[0].embeddings if len(parts) == 1 else ops.vconcat([p.embeddings for p in parts])
    L = emb.shape[0]
    return MixedSequence(emb, np.concatenate([p.vision for p in parts]), np.arange(L),
                         np.concatenate([p.token_ids for p in parts]))


def assemble_sequence(prompt_tokens, image_features: Tensor | MixedSequence | None,
                      answer_tokens, embed: Tensor) -> MixedSequence:
    """prompt text, then vision tokens, then answer text, with sequential positions.

    ``image_features`` may be adapter output ``[n, d]`` or a prebuilt fragment
    (e.g. a timestamped video fragment).
    """
    d = embed.shape[1]
    parts = []
    if len(prompt_tokens):
        parts.append(text_fragment(prompt_tokens, embed))
    if isinstance(image_features, MixedSequence):
        if image_features.embeddings.shape[1] != d:
            raise DimMismatch(f"vision width {image_features.embeddings.shape[1]} != embed_dim {d}")
        parts.append(image_features)
    elif image_features is not None:
        if image_features.data.ndim != 2 or image_features.shape[1] != d:
            raise DimMismatch(f"vision width {image_features.shape[-1]} != embed_dim {d}")
        parts.append(vision_fragment(image_features))
    if len(answer_tokens):
        parts.append(text_fragment(answer_tokens, embed))
    return concat_sequences(parts)


@dataclass(frozen=True)
class DecoderConfig:
    visual_expert: bool = True
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    vocab_size: int = VOCAB_SIZE
    ffn_hidden: int = 128
    vision_bidirectional: bool = False

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ShapeMismatch(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if (self.embed_dim // self.heads) % 2:
            raise ShapeMismatch("head width must be even for rotary embeddings")
        if self.depth < 0 or self.vocab_size < 1 or self.ffn_hidden < 1:
            raise ShapeMismatch("invalid decoder sizes")


ATTN_PROJ = ("q", "k", "v", "o")
FFN_PROJ = ("W", "V", "W2")


def init_decoder_params(cfg: DecoderConfig, rng: np.random.Generator,
                        vis_from_lang: bool = True) -> dict[str, Tensor]:
    """Random decoder weights.

    Visual-expert tensors start as copies of the language tensors unless
    ``vis_from_lang`` is False, in which case they are drawn independently.
    """
    d, h = cfg.embed_dim, cfg.ffn_hidden
    p = {"dec.embed": Tensor(rng.normal(0.0, 1.0, size=(cfg.vocab_size, d)))}
    for l in range(cfg.depth):
        p[f"dec.norm.{l}.attn"] = Tensor(np.ones(d))
        p[f"dec.norm.{l}.ffn"] = Tensor(np.ones(d))
        shapes = {f"attn.{n}": (d, d) for n in ATTN_PROJ}
        shapes.update({"ffn.W": (d, h), "ffn.V": (d, h), "ffn.W2": (h, d)})
        for name, (fi, fo) in shapes.items():
            lang = init_weight(rng, fi, fo)
            p[f"dec.{l}.{name}.lang"] = lang
            if cfg.visual_expert:
                p[f"dec.{l}.{name}.vis"] = lang.detach() if vis_from_lang else init_weight(rng, fi, fo)
    p["dec.norm.final"] = Tensor(np.ones(d))
    p["dec.head"] = init_weight(rng, d, cfg.vocab_size)
    return p


def layer_weights(params: dict, layer: int, kind: str, names, expert: str):
    try:
        return {n: params[f"dec.{layer}.{kind}.{n}.{expert}"] for n in names}
    except KeyError as exc:
        raise ShapeMismatch(f"missing decoder tensor {exc.args[0]}") from None


def attention_mask(seq: MixedSequence, vision_bidirectional: bool = False) -> np.ndarray:
    L = len(seq)
    mask = causal_mask(L)
    if vision_bidirectional:
        v = seq.vision
        # id of the contiguous vision run each position belongs to (0 = text)
        starts = v & ~np.concatenate([[False], v[:-1]])
        run = np.where(v, np.cumsum(starts), 0)
        mask |= (run[:, None] == run[None, :]) & v[:, None] & v[None, :]
    return mask


def _routed(x: Tensor, vision: np.ndarray, w_lang: Tensor, w_vis: Tensor | None) -> Tensor:
    y_lang = ops.matmul(x, w_lang)
    if w_vis is None or not vision.any():
        return y_lang
    return ops.select_rows(vision, ops.matmul(x, w_vis), y_lang)


def expert_attention(seq: MixedSequence, lang_params: dict, vis_params: dict | None,
                     heads: int, vision_bidirectional: bool = False,
                     weights_out: list | None = None) -> Tensor:
    """Causal self-attention whose projections are chosen per token by modality."""
    x = seq.embeddings
    d = x.shape[1]
    for name, w in lang_params.items():
        if w.shape != (d, d) or (vis_params is not None and vis_params[name].shape != (d, d)):
            raise ShapeMismatch(f"attention projection {name} must be [{d},{d}]")
    vis = vis_params or {}
    q = _routed(x, seq.vision, lang_params["q"], vis.get("q"))
    k = _routed(x, seq.vision, lang_params["k"], vis.get("k"))
    v = _routed(x, seq.vision, lang_params["v"], vis.get("v"))
    q = ops.rope(q, seq.positions, heads)
    k = ops.rope(k, seq.positions, heads)
    a = multihead_attention(q, k, v, heads, attention_mask(seq, vision_bidirectional), weights_out)
    return _routed(a, seq.vision, lang_params["o"], vis.get("o"))


def _ffn(x: Tensor, p: dict) -> Tensor:
    return ops.swiglu(x, p["W"], p["V"], p["W2"])


def expert_ffn(seq: MixedSequence, lang_params: dict, vis_params: dict | None) -> Tensor:
    """SwiGLU FFN with the weight set chosen per token by modality."""
    x = seq.embeddings
    if lang_params["W"].shape[0] != x.shape[1]:
        raise ShapeMismatch(f"ffn input width {lang_params['W'].shape[0]} != {x.shape[1]}")
    y_lang = _ffn(x, lang_params)
    if vis_params is None or not seq.vision.any():
        return y_lang
    return ops.select_rows(seq.vision, _ffn(x, vis_params), y_lang)


def decoder_forward(seq: MixedSequence, cfg: DecoderConfig, params: dict,
                    attn_weights: list | None = None) -> Tensor:
    """Logits ``[L, vocab_size]`` for a mixed sequence."""
    if seq.embeddings.shape[1] != cfg.embed_dim:
        raise ShapeMismatch(f"sequence width {seq.embeddings.shape[1]} != embed_dim {cfg.embed_dim}")
    x = seq.embeddings
    for l in range(cfg.depth):
        a_lang = layer_weights(params, l, "attn", ATTN_PROJ, "lang")
        f_lang = layer_weights(params, l, "ffn", FFN_PROJ, "lang")
        a_vis = layer_weights(params, l, "attn", ATTN_PROJ, "vis") if cfg.visual_expert else None
        f_vis = layer_weights(params, l, "ffn", FFN_PROJ, "vis") if cfg.visual_expert else None
        h = seq.with_embeddings(ops.rms_norm(x, params[f"dec.norm.{l}.attn"]))
        x = ops.add(x, expert_attention(h, a_lang, a_vis, cfg.heads,
                                        cfg.vision_bidirectional, attn_weights))
        h = seq.with_embeddings(ops.rms_norm(x, params[f"dec.norm.{l}.ffn"]))
        x = ops.add(x, expert_ffn(h, f_lang, f_vis))
    x = ops.rms_norm(x, params["dec.norm.final"])
    return ops.matmul(x, params["dec.head"])
