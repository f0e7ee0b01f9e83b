"""Patch-based ViT stand-in for the image encoder.

Images are ``[C, H, W]`` arrays in [0, 1].  The encoder embeds
non-overlapping ``patch_size`` patches, adds one learned positional vector
per patch index, then runs pre-norm transformer blocks with full attention.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleImage, ShapeMismatch
from .layers import init_weight, linear, multihead_attention
from .tensor import Tensor, ops

DEFAULT_PATCH_SIZE = 14


@dataclass(frozen=True)
class ImageGrid:
    """``[C, H, W]`` image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or min(px.shape) < 1:
            raise ShapeMismatch(f"image must be [C,H,W], got {px.shape}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class VitConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    embed_dim: int = 64
    depth: int = 1
    heads: int = 4
    grid_h: int = 4
    grid_w: int = 4
    channels: int = 3

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ShapeMismatch(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0 or self.patch_size < 1 or self.grid_h < 1 or self.grid_w < 1:
            raise ShapeMismatch("depth must be >= 0 and patch/grid sizes >= 1")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w


def _pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if px.ndim != 3:
        raise ShapeMismatch(f"image must be [C,H,W], got {px.shape}")
    return px


def token_count(resolution: int, patch_size: int) -> int:
    if resolution % patch_size:
        raise IndivisibleImage(f"resolution {resolution} not divisible by patch {patch_size}")
    return (resolution // patch_size) ** 2


def patchify(img, patch_size: int) -> Tensor:
    """Row-major patches; each patch flattened channel-major, then row-major pixels."""
    px = _pixels(img)
    c, h, w = px.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleImage(f"{h}x{w} image not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    p = px.reshape(c, gh, patch_size, gw, patch_size).transpose(1, 3, 0, 2, 4)
    return Tensor(p.reshape(gh * gw, c * patch_size * patch_size))


def unpatchify(patches, patch_size: int, channels: int, grid_h: int, grid_w: int) -> np.ndarray:
    arr = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    p = arr.reshape(grid_h, grid_w, channels, patch_size, patch_size).transpose(2, 0, 3, 1, 4)
    return p.reshape(channels, grid_h * patch_size, grid_w * patch_size)


def resize_nearest(img, size: int) -> ImageGrid:
    """Nearest-neighbour resample to ``size x size`` (bin-centre sampling)."""
    px = _pixels(img)
    _, h, w = px.shape
    rows = np.floor((np.arange(size) + 0.5) * h / size).astype(int)
    cols = np.floor((np.arange(size) + 0.5) * w / size).astype(int)
    return ImageGrid(px[:, rows][:, :, cols])


def init_vit_params(cfg: VitConfig, rng: np.random.Generator,
                    zero_block_outputs: bool = False) -> dict[str, Tensor]:
    d = cfg.embed_dim
    p = {
        "vit.patch.w": init_weight(rng, cfg.patch_dim, d),
        "vit.patch.b": Tensor(np.zeros(d)),
        "vit.pos": Tensor(rng.normal(0.0, 0.02, size=(cfg.n_patches, d))),
    }
    for l in range(cfg.depth):
        pre = f"vit.{l}"
        p[f"{pre}.ln1.g"] = Tensor(np.ones(d))
        for name in "qkv":
            p[f"{pre}.attn.{name}.w"] = init_weight(rng, d, d)
            # no key bias: it shifts every score in a row equally, so softmax ignores it
            if name != "k":
                p[f"{pre}.attn.{name}.b"] = Tensor(np.zeros(d))
        p[f"{pre}.attn.o.w"] = init_weight(rng, d, d, zero=zero_block_outputs)
        p[f"{pre}.attn.o.b"] = Tensor(np.zeros(d))
        p[f"{pre}.ln2.g"] = Tensor(np.ones(d))
        p[f"{pre}.mlp.fc1.w"] = init_weight(rng, d, 4 * d)
        p[f"{pre}.mlp.fc1.b"] = Tensor(np.zeros(4 * d))
        p[f"{pre}.mlp.fc2.w"] = init_weight(rng, 4 * d, d, zero=zero_block_outputs)
        p[f"{pre}.mlp.fc2.b"] = Tensor(np.zeros(d))
    return p


def _pos_rows(cfg: VitConfig, grid: tuple[int, int]) -> np.ndarray:
    gh, gw = grid
    if gh > cfg.grid_h or gw > cfg.grid_w:
        raise ShapeMismatch(f"grid {gh}x{gw} exceeds configured {cfg.grid_h}x{cfg.grid_w}")
    return (np.arange(gh)[:, None] * cfg.grid_w + np.arange(gw)[None, :]).reshape(-1)


def vit_forward(patches: Tensor, cfg: VitConfig, params: dict, grid=None,
                attn_weights: list | None = None) -> Tensor:
    """Encode ``[n_patches, patch_dim]`` into ``[n_patches, embed_dim]``.

    ``grid`` may name a smaller (h, w) patch grid for low-resolution inputs;
    it then uses the top-left block of the positional table.
    """
    grid = (cfg.grid_h, cfg.grid_w) if grid is None else tuple(grid)
    n = grid[0] * grid[1]
    if patches.shape != (n, cfg.patch_dim):
        raise ShapeMismatch(f"expected patches {(n, cfg.patch_dim)}, got {patches.shape}")
    x = linear(patches, params["vit.patch.w"], params["vit.patch.b"])
    if grid == (cfg.grid_h, cfg.grid_w):
        pos = params["vit.pos"]
    else:
        pos = ops.embedding(params["vit.pos"], _pos_rows(cfg, grid))
    x = ops.add(x, pos)
    for l in range(cfg.depth):
        pre = f"vit.{l}"
        h = ops.layer_norm(x, params[f"{pre}.ln1.g"])
        q = linear(h, params[f"{pre}.attn.q.w"], params[f"{pre}.attn.q.b"])
        k = linear(h, params[f"{pre}.attn.k.w"])
        v = linear(h, params[f"{pre}.attn.v.w"], params[f"{pre}.attn.v.b"])
        a = multihead_attention(q, k, v, cfg.heads, weights_out=attn_weights)
        x = ops.add(x, linear(a, params[f"{pre}.attn.o.w"], params[f"{pre}.attn.o.b"]))
        h = ops.layer_norm(x, params[f"{pre}.ln2.g"])
        h = ops.gelu(linear(h, params[f"{pre}.mlp.fc1.w"], params[f"{pre}.mlp.fc1.b"]))
        x = ops.add(x, linear(h, params[f"{pre}.mlp.fc2.w"], params[f"{pre}.mlp.fc2.b"]))
    return x


def encode_image(img, cfg: VitConfig, params: dict) -> Tensor:
    px = _pixels(img)
    grid = (px.shape[1] // cfg.patch_size, px.shape[2] // cfg.patch_size)
    return vit_forward(patchify(px, cfg.patch_size), cfg, params, grid=grid)


# CGIMG text format: "CGIMG C H W" header, then C*H*W decimal floats.

def format_cgimg(img) -> str:
    px = _pixels(img)
    c, h, w = px.shape
    lines = [f"CGIMG {c} {h} {w}"]
    for ch in range(c):
        for r in range(h):
            lines.append(" ".join(repr(float(v)) for v in px[ch, r]))
    return "\n".join(lines) + "\n"


def parse_cgimg(text: str) -> ImageGrid:
    head, _, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 4 or parts[0] != "CGIMG":
        raise ValueError("not a CGIMG file: bad header")
    c, h, w = (int(v) for v in parts[1:])
    values = np.array(body.split(), dtype=np.float64)
    if values.size != c * h * w:
        raise ValueError(f"CGIMG body has {values.size} values, header promises {c * h * w}")
    return ImageGrid(values.reshape(c, h, w))


def read_cgimg(path: str | os.PathLike) -> ImageGrid:
    with open(path, encoding="utf-8") as f:
        return parse_cgimg(f.read())


def write_cgimg(path: str | os.PathLike, img) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_cgimg(img))
