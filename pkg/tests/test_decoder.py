import numpy as np
import pytest

import reference
from visexpert.decoder import (DecoderConfig, MixedSequence, Modality, assemble_sequence,
                               attention_mask, decoder_forward, expert_attention, expert_ffn,
                               init_decoder_params, layer_weights)
from visexpert.errors import DimMismatch, InvalidSequence, ShapeMismatch
from visexpert.tensor import Tensor

TOY = dict(embed_dim=16, depth=2, heads=2, ffn_hidden=24, vocab_size=20)


def random_sequence(rng, L, vision=None):
    vision = rng.random(L) < 0.5 if vision is None else np.asarray(vision, bool)
    ids = np.where(vision, -1, rng.integers(0, 20, L))
    return MixedSequence(Tensor(rng.normal(size=(L, TOY["embed_dim"]))), vision, np.arange(L), ids)


def test_assemble_prompt_vision_answer(rng):
    embed = Tensor(rng.normal(size=(259, 8)))
    seq = assemble_sequence([1, 2], Tensor(rng.normal(size=(4, 8))), [3, 4, 5], embed)
    assert seq.mask_string() == "TTVVVVTTT"
    assert seq.mask[2] is Modality.VISION
    assert seq.positions.tolist() == list(range(9))
    assert seq.token_ids.tolist() == [1, 2, -1, -1, -1, -1, 3, 4, 5]
    np.testing.assert_array_equal(seq.embeddings.data[0], embed.data[1])


def test_assemble_without_image(rng):
    embed = Tensor(rng.normal(size=(259, 8)))
    assert assemble_sequence([1], None, [2], embed).mask_string() == "TT"


def test_assemble_width_mismatch(rng):
    embed = Tensor(rng.normal(size=(259, 8)))
    with pytest.raises(DimMismatch):
        assemble_sequence([1], Tensor(np.zeros((2, 6))), [2], embed)


def test_sequence_invariants():
    with pytest.raises(InvalidSequence):
        MixedSequence(Tensor(np.zeros((2, 4))), [False, True], [0, 1], [5, 6])
    with pytest.raises(InvalidSequence):
        MixedSequence(Tensor(np.zeros((2, 4))), [False, False], [0, 2], [5, 6])
    with pytest.raises(InvalidSequence):
        MixedSequence(Tensor(np.zeros((2, 4))), [False], [0], [5])


def test_config_validation():
    with pytest.raises(ShapeMismatch):
        DecoderConfig(embed_dim=10, heads=4)


def test_all_text_matches_expert_free(rng, fp64):
    expert = DecoderConfig(visual_expert=True, **TOY)
    plain = DecoderConfig(visual_expert=False, **TOY)
    params = init_decoder_params(expert, rng, vis_from_lang=False)
    for L in (1, 4, 9):
        seq = random_sequence(rng, L, vision=np.zeros(L, bool))
        a = decoder_forward(seq, expert, params).data
        b = decoder_forward(seq, plain, params).data
        assert np.abs(a - b).max() <= 1e-6


def test_tied_weights_match_shared_mode(rng, fp64):
    expert = DecoderConfig(visual_expert=True, **TOY)
    plain = DecoderConfig(visual_expert=False, **TOY)
    params = init_decoder_params(expert, rng, vis_from_lang=True)
    for _ in range(5):
        seq = random_sequence(rng, int(rng.integers(2, 12)))
        a = decoder_forward(seq, expert, params).data
        b = decoder_forward(seq, plain, params).data
        assert np.abs(a - b).max() <= 1e-6


@pytest.mark.parametrize("visual_expert", [True, False])
def test_forward_matches_loop_oracle(rng, fp64, visual_expert):
    cfg = DecoderConfig(visual_expert=visual_expert, **TOY)
    for _ in range(5):
        params = init_decoder_params(cfg, rng, vis_from_lang=False)
        for k, v in params.items():
            if k.startswith("dec.norm"):
                params[k] = Tensor(rng.uniform(0.5, 1.5, size=v.shape))
        seq = random_sequence(rng, int(rng.integers(1, 10)))
        got = decoder_forward(seq, cfg, params).data
        want = reference.decoder(seq.embeddings.data, seq.vision, params, cfg.depth, cfg.heads, visual_expert)
        assert np.abs(got - want).max() <= 1e-6


def test_attention_and_ffn_match_oracle(rng, fp64):
    d = TOY["embed_dim"]
    cfg = DecoderConfig(**TOY)
    params = init_decoder_params(cfg, rng, vis_from_lang=False)
    seq = random_sequence(rng, 7, vision=[0, 1, 1, 0, 1, 0, 0])
    lang = layer_weights(params, 0, "attn", "qkvo", "lang")
    vis = layer_weights(params, 0, "attn", "qkvo", "vis")
    got = expert_attention(seq, lang, vis, cfg.heads).data
    want = reference.attention(seq.embeddings.data, seq.vision,
                               {k: v.data for k, v in lang.items()}, {k: v.data for k, v in vis.items()}, cfg.heads)
    assert got.shape == (7, d)
    assert np.abs(got - want).max() <= 1e-9
    fl = layer_weights(params, 0, "ffn", ("W", "V", "W2"), "lang")
    fv = layer_weights(params, 0, "ffn", ("W", "V", "W2"), "vis")
    got = expert_ffn(seq, fl, fv).data
    want = reference.ffn(seq.embeddings.data, seq.vision,
                         {k: v.data for k, v in fl.items()}, {k: v.data for k, v in fv.items()})
    assert np.abs(got - want).max() <= 1e-9


def test_vision_rows_use_vision_weights(rng, fp64):
    """Changing only the vis FFN weights changes only vision rows."""
    cfg = DecoderConfig(**TOY)
    params = init_decoder_params(cfg, rng, vis_from_lang=False)
    seq = random_sequence(rng, 6, vision=[0, 1, 1, 0, 0, 1])
    fl = layer_weights(params, 0, "ffn", ("W", "V", "W2"), "lang")
    fv = layer_weights(params, 0, "ffn", ("W", "V", "W2"), "vis")
    base = expert_ffn(seq, fl, fv).data
    fv2 = dict(fv, W2=Tensor(fv["W2"].data * 2))
    diff = np.abs(expert_ffn(seq, fl, fv2).data - base).max(axis=1)
    assert (diff[seq.vision] > 0).all() and (diff[~seq.vision] == 0).all()


@pytest.mark.parametrize("visual_expert", [True, False])
def test_causality_exact(rng, visual_expert):
    cfg = DecoderConfig(visual_expert=visual_expert, **TOY)
    params = init_decoder_params(cfg, rng, vis_from_lang=False)
    for _ in range(5):
        L = int(rng.integers(2, 10))
        seq = random_sequence(rng, L)
        base = decoder_forward(seq, cfg, params).data
        i = int(rng.integers(0, L))
        emb = seq.embeddings.data.copy()
        emb[i] += rng.normal(size=emb.shape[1])
        out = decoder_forward(seq.with_embeddings(Tensor(emb)), cfg, params).data
        assert np.array_equal(out[:i], base[:i])
        assert not np.array_equal(out[i], base[i])


def test_attention_weights_lower_triangular(rng):
    cfg = DecoderConfig(**TOY)
    params = init_decoder_params(cfg, rng)
    weights = []
    decoder_forward(random_sequence(rng, 6), cfg, params, attn_weights=weights)
    assert len(weights) == cfg.depth * cfg.heads
    for w in weights:
        assert (np.triu(w, 1) == 0).all()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-5)


def test_bidirectional_vision_mask(rng):
    seq = random_sequence(rng, 7, vision=[0, 1, 1, 0, 1, 1, 0])
    m = attention_mask(seq, vision_bidirectional=True)
    assert m[1, 2] and m[4, 5]
    assert not m[1, 4] and not m[0, 1] and not m[3, 4]
    assert (attention_mask(seq) == np.tril(np.ones((7, 7), bool))).all()


def test_bidirectional_lets_vision_see_later_vision(rng):
    cfg = DecoderConfig(vision_bidirectional=True, **TOY)
    params = init_decoder_params(cfg, rng)
    seq = random_sequence(rng, 5, vision=[0, 1, 1, 1, 0])
    base = decoder_forward(seq, cfg, params).data
    emb = seq.embeddings.data.copy()
    emb[3] += 1.0
    out = decoder_forward(seq.with_embeddings(Tensor(emb)), cfg, params).data
    assert np.array_equal(out[0], base[0])
    assert not np.array_equal(out[1], base[1])


def test_missing_weights(rng):
    cfg = DecoderConfig(**TOY)
    params = init_decoder_params(DecoderConfig(visual_expert=False, **TOY), rng)
    with pytest.raises(ShapeMismatch):
        decoder_forward(random_sequence(rng, 3), cfg, params)
