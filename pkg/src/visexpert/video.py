"""Video input path: uniform frame sampling, per-frame timestamp text, and
an extra 2x2 compression conv between the ViT and the adapter."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterConfig, adapt, grid_conv
from .decoder import MixedSequence, concat_sequences, text_fragment, vision_fragment
from .errors import EmptyManifest, InvalidBundle, NegativeTimestamp, ShapeMismatch
from .tensor import Tensor
from .tokenizer import ByteTokenizer
from .vision import ImageGrid, VitConfig, encode_image, read_cgimg

DEFAULT_N_FRAMES = 24
TIMESTAMP_TEMPLATE = "Time {s}s:"
EXTRA_CONV_PREFIX = "video.extra_conv"


@dataclass(frozen=True)
class VideoConfig:
    n_frames: int = DEFAULT_N_FRAMES
    timestamp_template: str = TIMESTAMP_TEMPLATE

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")


@dataclass(frozen=True)
class FrameBundle:
    """Frames with their timestamps in seconds.

    Timestamps must be non-negative and non-decreasing; equal neighbours only
    arise when a short clip is up-sampled by :func:`select_frames`.
    """

    frames: tuple
    timestamps: tuple = field(default=())

    def __post_init__(self):
        frames, ts = tuple(self.frames), tuple(float(t) for t in self.timestamps)
        if len(frames) != len(ts):
            raise InvalidBundle(f"{len(frames)} frames but {len(ts)} timestamps")
        if not frames:
            raise InvalidBundle("a bundle needs at least one frame")
        if any(t < 0 or not math.isfinite(t) for t in ts):
            raise InvalidBundle("timestamps must be finite and non-negative")
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidBundle("timestamps must be in increasing order")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return len(self.frames)


def sample_indices(n_source: int, n: int) -> list[int]:
    """Centre-of-bin uniform sampling: floor((i + 0.5) * N / n)."""
    if n_source < 1:
        raise EmptyManifest("cannot sample from an empty manifest")
    if n < 1:
        raise ValueError("n must be >= 1")
    # integer arithmetic keeps the floor exact
    return [((2 * i + 1) * n_source) // (2 * n) for i in range(n)]


def select_frames(manifest, n: int = DEFAULT_N_FRAMES) -> FrameBundle:
    """Pick ``n`` frames from a list of (timestamp, frame) pairs."""
    manifest = list(manifest)
    if not manifest:
        raise EmptyManifest("manifest has no frames")
    ts = [float(t) for t, _ in manifest]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise InvalidBundle("manifest timestamps must be strictly increasing")
    idx = sample_indices(len(manifest), n)
    return FrameBundle(tuple(manifest[i][1] for i in idx), tuple(ts[i] for i in idx))


def render_timestamp(seconds: float, template: str = TIMESTAMP_TEMPLATE) -> str:
    if seconds < 0:
        raise NegativeTimestamp(f"negative timestamp {seconds}")
    s = f"{float(seconds):.1f}"
    if s.endswith(".0"):
        s = s[:-2]
    return template.format(s=s)


def read_manifest(path: str | os.PathLike) -> list[tuple[float, Path]]:
    """Parse ``{seconds} {path}`` lines; relative paths resolve against the manifest."""
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            sec, _, frame = line.partition(" ")
            if not frame:
                raise ValueError(f"{path}:{lineno}: expected '<seconds> <path>'")
            entries.append((float(sec), base / frame.strip()))
    if not entries:
        raise EmptyManifest(f"{path} lists no frames")
    return entries


def load_frames(bundle: FrameBundle) -> FrameBundle:
    """Replace path entries by decoded :class:`ImageGrid` frames."""
    cache: dict = {}
    frames = []
    for fr in bundle.frames:
        if isinstance(fr, (str, os.PathLike)):
            key = os.fspath(fr)
            if key not in cache:
                cache[key] = read_cgimg(key)
            fr = cache[key]
        frames.append(fr)
    return FrameBundle(tuple(frames), bundle.timestamps)


def video_adapter_config(vit_cfg: VitConfig, out_dim: int, hidden_dim: int | None = None) -> AdapterConfig:
    """Adapter sized for the half-resolution grid left by the extra conv."""
    if vit_cfg.grid_h % 4 or vit_cfg.grid_w % 4:
        raise ShapeMismatch("video path needs a ViT grid divisible by 4")
    return AdapterConfig(vit_cfg.embed_dim, out_dim, vit_cfg.grid_h // 2, vit_cfg.grid_w // 2, hidden_dim)


def encode_frame(frame, vit_cfg: VitConfig, params: dict, adapter_cfg: AdapterConfig) -> Tensor:
    img = frame if isinstance(frame, ImageGrid) else ImageGrid(frame)
    gh, gw = img.height // vit_cfg.patch_size, img.width // vit_cfg.patch_size
    feats = encode_image(img, vit_cfg, params)
    pooled = grid_conv(feats, gh, gw, params[f"{EXTRA_CONV_PREFIX}.w"], params[f"{EXTRA_CONV_PREFIX}.b"])
    return adapt(pooled, adapter_cfg, params, grid=(gh // 2, gw // 2))


def encode_video(bundle: FrameBundle, vit_cfg: VitConfig, params: dict,
                 adapter_cfg: AdapterConfig, tokenizer: ByteTokenizer | None = None,
                 template: str = TIMESTAMP_TEMPLATE) -> MixedSequence:
    """Interleave ``[timestamp text, frame vision tokens]`` for every frame.

    Each frame goes ViT -> extra 2x2 conv -> adapter, so it contributes
    ViT tokens / 16 vision tokens.  ``params`` needs ``vit.*``,
    ``video.extra_conv.*``, ``adapter.*`` and ``dec.embed``.
    """
    tokenizer = tokenizer or ByteTokenizer()
    bundle = load_frames(bundle)
    embed = params["dec.embed"]
    parts = []
    for t, frame in zip(bundle.timestamps, bundle.frames):
        parts.append(text_fragment(tokenizer.encode(render_timestamp(t, template)), embed))
        parts.append(vision_fragment(encode_frame(frame, vit_cfg, params, adapter_cfg)))
    return concat_sequences(parts)


def fragment_pattern(seq: MixedSequence) -> list[str]:
    """Run-length modality pattern, e.g. ['T', 'V', 'T', 'V']."""
    pattern = []
    for tag in seq.mask_string():
        if not pattern or pattern[-1] != tag:
            pattern.append(tag)
    return pattern


def synthetic_manifest(n_frames: int, fps: float = 1.0, channels: int = 3, size: int = 8,
                       seed: int = 0) -> list[tuple[float, ImageGrid]]:
    """Random frames at a fixed rate; handy for tests and demos."""
    rng = np.random.default_rng(seed)
    return [(i / fps, ImageGrid(rng.random((channels, size, size)))) for i in range(n_frames)]
