import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visexpert.decoder import DecoderConfig
from visexpert.errors import EmptyManifest, InvalidBundle, NegativeTimestamp, ShapeMismatch
from visexpert.model import ModelConfig, VLModel
from visexpert.tokenizer import ByteTokenizer
from visexpert.video import (FrameBundle, encode_video, fragment_pattern, read_manifest,
                             render_timestamp, sample_indices, select_frames, synthetic_manifest,
                             video_adapter_config)
from visexpert.vision import VitConfig, write_cgimg


def test_sample_48_to_24_odd_indices():
    assert sample_indices(48, 24) == list(range(1, 48, 2))


def test_sample_short_clip_repeats():
    assert sample_indices(3, 6) == [0, 0, 1, 1, 2, 2]


@given(st.integers(1, 500), st.integers(1, 64))
@settings(max_examples=100, deadline=None)
def test_sample_indices_properties(n_source, n):
    idx = sample_indices(n_source, n)
    assert len(idx) == n
    assert all(0 <= i < n_source for i in idx)
    assert idx == sorted(idx)
    if n <= n_source:
        assert len(set(idx)) == n


def test_sample_empty():
    with pytest.raises(EmptyManifest):
        sample_indices(0, 4)


def test_select_frames_keeps_timestamps():
    manifest = [(float(i), f"f{i}") for i in range(48)]
    b = select_frames(manifest)
    assert len(b) == 24
    assert b.timestamps == tuple(float(i) for i in range(1, 48, 2))
    assert b.frames[0] == "f1"


def test_select_frames_requires_increasing():
    with pytest.raises(InvalidBundle):
        select_frames([(1.0, "a"), (1.0, "b")])
    with pytest.raises(EmptyManifest):
        select_frames([])


def test_bundle_validation():
    with pytest.raises(InvalidBundle):
        FrameBundle(("a", "b"), (0.0,))
    with pytest.raises(InvalidBundle):
        FrameBundle(("a", "b"), (2.0, 1.0))
    with pytest.raises(InvalidBundle):
        FrameBundle(("a",), (-1.0,))


@pytest.mark.parametrize("sec,text", [(0, "Time 0s:"), (3.0, "Time 3s:"), (2.5, "Time 2.5s:"),
                                      (12.25, "Time 12.2s:")])
def test_render_timestamp(sec, text):
    assert render_timestamp(sec) == text


def test_render_negative():
    with pytest.raises(NegativeTimestamp):
        render_timestamp(-0.5)


def test_read_manifest_resolves_relative(tmp_path):
    (tmp_path / "frames").mkdir()
    (tmp_path / "v.txt").write_text("0 frames/a.cgimg\n\n1.5 frames/b.cgimg\n")
    entries = read_manifest(tmp_path / "v.txt")
    assert entries == [(0.0, tmp_path / "frames/a.cgimg"), (1.5, tmp_path / "frames/b.cgimg")]


def test_read_manifest_empty(tmp_path):
    (tmp_path / "v.txt").write_text("\n")
    with pytest.raises(EmptyManifest):
        read_manifest(tmp_path / "v.txt")


def video_model(grid=8, seed=0):
    cfg = ModelConfig(vit=VitConfig(patch_size=2, embed_dim=8, depth=1, heads=2, grid_h=grid, grid_w=grid),
                      decoder=DecoderConfig(embed_dim=16, depth=1, heads=2, ffn_hidden=16), video=True)
    return VLModel.init(cfg, seed)


def test_video_fragment_pattern_and_token_count():
    model = video_model()
    bundle = select_frames(synthetic_manifest(48, size=16))
    seq = model.video_fragment(bundle)
    assert fragment_pattern(seq) == ["T", "V"] * 24
    tok = ByteTokenizer()
    per_frame = [len(tok.encode(render_timestamp(t))) + 64 // 16 for t in bundle.timestamps]
    assert len(seq) == sum(per_frame)
    assert int(seq.vision.sum()) == 24 * 4


@pytest.mark.parametrize("grid", [4, 8, 12])
def test_per_frame_tokens_are_sixteenth(grid):
    model = video_model(grid)
    bundle = FrameBundle((np.random.default_rng(0).random((3, 2 * grid, 2 * grid)),), (0.0,))
    seq = model.video_fragment(bundle)
    assert int(seq.vision.sum()) == grid * grid // 16


def test_video_adapter_needs_grid_divisible_by_four():
    with pytest.raises(ShapeMismatch):
        video_adapter_config(VitConfig(grid_h=6, grid_w=6), 16)


def test_timestamp_text_precedes_frame():
    model = video_model()
    bundle = FrameBundle(tuple(f for _, f in synthetic_manifest(2, size=16)), (0.0, 1.5))
    seq = model.video_fragment(bundle)
    tok = ByteTokenizer()
    text = [int(i) for i in seq.token_ids if i >= 0]
    assert tok.decode(text) == "Time 0s:Time 1.5s:"


def test_encode_video_from_files(tmp_path):
    model = video_model()
    lines = []
    for i, (t, img) in enumerate(synthetic_manifest(5, size=16)):
        write_cgimg(tmp_path / f"{i}.cgimg", img)
        lines.append(f"{t} {i}.cgimg")
    (tmp_path / "m.txt").write_text("\n".join(lines) + "\n")
    seq = model.video_fragment(str(tmp_path / "m.txt"))
    assert fragment_pattern(seq) == ["T", "V"] * 24


def test_image_model_rejects_video():
    cfg = ModelConfig(decoder=DecoderConfig(embed_dim=16, depth=1, heads=2, ffn_hidden=16))
    with pytest.raises(ShapeMismatch):
        VLModel.init(cfg).video_fragment(FrameBundle(("x",), (0.0,)))


def test_encode_video_direct_params():
    model = video_model()
    vit = model.config.vit
    seq = encode_video(select_frames(synthetic_manifest(4, size=16), 4), vit, model.params,
                       video_adapter_config(vit, 16, model.config.adapter.hidden_dim))
    assert fragment_pattern(seq) == ["T", "V"] * 4
