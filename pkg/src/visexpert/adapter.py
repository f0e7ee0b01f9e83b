"""Vision-to-language bridge: 2x2 stride-2 conv over the feature grid, then SwiGLU.

The conv keeps the channel width (``in_dim``) and quarters the sequence;
the SwiGLU projection does the width change to the decoder's ``out_dim``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OddGrid, ShapeMismatch
from .layers import init_weight
from .tensor import Tensor, ops

CONV_KERNEL = 2


@dataclass(frozen=True)
class AdapterConfig:
    in_dim: int
    out_dim: int
    grid_h: int
    grid_w: int
    hidden_dim: int | None = None  # defaults to 4 * out_dim

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.grid_h, self.grid_w) < 1:
            raise ShapeMismatch("adapter dims and grid must be >= 1")
        if self.grid_h % 2 or self.grid_w % 2:
            raise OddGrid(f"adapter grid {self.grid_h}x{self.grid_w} must be even")
        if self.hidden_dim is None:
            object.__setattr__(self, "hidden_dim", 4 * self.out_dim)


def adapter_output_len(grid_h: int, grid_w: int) -> int:
    if grid_h % 2 or grid_w % 2:
        raise OddGrid(f"grid {grid_h}x{grid_w} must be even")
    return (grid_h // 2) * (grid_w // 2)


def init_conv_params(prefix: str, channels: int, rng: np.random.Generator) -> dict[str, Tensor]:
    fan_in = channels * CONV_KERNEL * CONV_KERNEL
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(channels, channels, 2, 2))
    return {f"{prefix}.w": Tensor(w), f"{prefix}.b": Tensor(np.zeros(channels))}


def averaging_conv_params(prefix: str, channels: int) -> dict[str, Tensor]:
    """Per-channel 2x2 mean: 0.25 on each tap of the matching channel."""
    w = np.zeros((channels, channels, 2, 2))
    for c in range(channels):
        w[c, c] = 0.25
    return {f"{prefix}.w": Tensor(w), f"{prefix}.b": Tensor(np.zeros(channels))}


def init_adapter_params(cfg: AdapterConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p = init_conv_params("adapter.conv", cfg.in_dim, rng)
    p["adapter.swiglu.W"] = init_weight(rng, cfg.in_dim, cfg.hidden_dim)
    p["adapter.swiglu.V"] = init_weight(rng, cfg.in_dim, cfg.hidden_dim)
    p["adapter.swiglu.W2"] = init_weight(rng, cfg.hidden_dim, cfg.out_dim)
    p["adapter.swiglu.bW"] = Tensor(np.zeros(cfg.hidden_dim))
    p["adapter.swiglu.bV"] = Tensor(np.zeros(cfg.hidden_dim))
    p["adapter.swiglu.b2"] = Tensor(np.zeros(cfg.out_dim))
    return p


def grid_conv(features: Tensor, grid_h: int, grid_w: int, w: Tensor, b: Tensor) -> Tensor:
    """Apply conv2x2_s2 to a row-major ``[grid_h*grid_w, C]`` token sequence.

    Returns the ``[(grid_h/2)*(grid_w/2), C_out]`` sequence, row-major.
    """
    n, c = features.shape
    if n != grid_h * grid_w:
        raise ShapeMismatch(f"{n} tokens for a {grid_h}x{grid_w} grid")
    if grid_h % 2 or grid_w % 2:
        raise OddGrid(f"grid {grid_h}x{grid_w} must be even")
    chw = ops.reshape(ops.transpose(features), (c, grid_h, grid_w))
    y = ops.conv2x2_s2(chw, w, b)
    c_out = y.shape[0]
    return ops.transpose(ops.reshape(y, (c_out, (grid_h // 2) * (grid_w // 2))))


def adapter_conv(features: Tensor, cfg: AdapterConfig, params: dict,
                 grid: tuple[int, int] | None = None) -> Tensor:
    gh, gw = (cfg.grid_h, cfg.grid_w) if grid is None else grid
    if features.shape[1] != cfg.in_dim:
        raise ShapeMismatch(f"feature width {features.shape[1]} != in_dim {cfg.in_dim}")
    return grid_conv(features, gh, gw, params["adapter.conv.w"], params["adapter.conv.b"])


def adapt(features: Tensor, cfg: AdapterConfig, params: dict,
          grid: tuple[int, int] | None = None) -> Tensor:
    """``[gh*gw, in_dim]`` ViT features -> ``[(gh/2)*(gw/2), out_dim]`` decoder tokens.

    ``grid`` overrides the configured grid (used for reduced-resolution inputs).
    """
    pooled = adapter_conv(features, cfg, params, grid)
    return ops.swiglu(pooled, params["adapter.swiglu.W"], params["adapter.swiglu.V"],
                      params["adapter.swiglu.W2"], params.get("adapter.swiglu.bW"),
                      params.get("adapter.swiglu.bV"), params.get("adapter.swiglu.b2"))
