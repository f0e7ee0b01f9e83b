"""Full vision-language model: ViT -> adapter -> decoder, plus the video path.

Parameters live in one flat, insertion-ordered ``name -> Tensor`` dict.  The
model configuration travels inside checkpoints as the ``meta.config`` tensor
(small integers stored exactly as float32).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .adapter import AdapterConfig, adapt, init_adapter_params, init_conv_params
from .decoder import DecoderConfig, MixedSequence, assemble_sequence, decoder_forward, init_decoder_params
from .errors import CheckpointError, ShapeMismatch, UnknownGroup
from .tensor import Tensor, checkpoint, no_record
from .tokenizer import EOS, ByteTokenizer
from .video import (EXTRA_CONV_PREFIX, FrameBundle, encode_video, load_frames,
                    read_manifest, select_frames)
from .vision import ImageGrid, VitConfig, encode_image, resize_nearest

PARAM_GROUPS = ("vit", "adapter", "extra_conv", "decoder", "visual_expert")
META_KEY = "meta.config"
_META_VERSION = 1


def group_of(name: str) -> str:
    if name.startswith("vit."):
        return "vit"
    if name.startswith("adapter."):
        return "adapter"
    if name.startswith("video."):
        return "extra_conv"
    if name.startswith("dec."):
        return "visual_expert" if name.endswith(".vis") else "decoder"
    raise UnknownGroup(f"tensor {name!r} belongs to no parameter group")


@dataclass(frozen=True)
class ModelConfig:
    vit: VitConfig = field(default_factory=lambda: VitConfig(patch_size=2, embed_dim=32, depth=1,
                                                               heads=2, grid_h=4, grid_w=4))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    adapter_hidden: int | None = None
    video: bool = False

    def __post_init__(self):
        if self.adapter_hidden is None:
            object.__setattr__(self, "adapter_hidden", 4 * self.decoder.embed_dim)

    @property
    def adapter(self) -> AdapterConfig:
        return AdapterConfig(self.vit.embed_dim, self.decoder.embed_dim,
                             self.vit.grid_h, self.vit.grid_w, self.adapter_hidden)

    @property
    def video_adapter(self) -> AdapterConfig:
        return AdapterConfig(self.vit.embed_dim, self.decoder.embed_dim,
                             self.vit.grid_h // 2, self.vit.grid_w // 2, self.adapter_hidden)

    @property
    def image_resolution(self) -> int:
        return self.vit.grid_h * self.vit.patch_size

    def to_vector(self) -> np.ndarray:
        v, d = self.vit, self.decoder
        return np.array([_META_VERSION, v.patch_size, v.embed_dim, v.depth, v.heads, v.grid_h,
                         v.grid_w, v.channels, self.adapter.hidden_dim, int(d.visual_expert),
                         d.embed_dim, d.depth, d.heads, d.vocab_size, d.ffn_hidden,
                         int(d.vision_bidirectional), int(self.video)], dtype=np.float32)

    @classmethod
    def from_vector(cls, vec) -> "ModelConfig":
        vals = [int(x) for x in np.asarray(vec).reshape(-1)]
        if len(vals) != 17 or vals[0] != _META_VERSION:
            raise CheckpointError("unrecognised meta.config tensor")
        vit = VitConfig(patch_size=vals[1], embed_dim=vals[2], depth=vals[3], heads=vals[4],
                        grid_h=vals[5], grid_w=vals[6], channels=vals[7])
        dec = DecoderConfig(visual_expert=bool(vals[9]), embed_dim=vals[10], depth=vals[11],
                            heads=vals[12], vocab_size=vals[13], ffn_hidden=vals[14],
                            vision_bidirectional=bool(vals[15]))
        return cls(vit=vit, decoder=dec, adapter_hidden=vals[8], video=bool(vals[16]))


class VLModel:
    """Parameters plus the forward plumbing for image, video and text samples."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.tokenizer = ByteTokenizer()

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "VLModel":
        rng = np.random.default_rng(seed)
        from .vision import init_vit_params

        params = init_vit_params(config.vit, rng)
        params.update(init_adapter_params(config.adapter, rng))
        if config.video:
            params.update(init_conv_params(EXTRA_CONV_PREFIX, config.vit.embed_dim, rng))
        params.update(init_decoder_params(config.decoder, rng))
        return cls(config, params)

    # parameter groups --------------------------------------------------

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {g: [] for g in PARAM_GROUPS}
        for name in self.params:
            out[group_of(name)].append(name)
        return out

    # persistence -------------------------------------------------------

    def state_dict(self) -> dict:
        state = {META_KEY: self.config.to_vector()}
        state.update(self.params)
        return state

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(self.state_dict())

    def save(self, path: str | os.PathLike) -> None:
        checkpoint.save(path, self.state_dict())

    @classmethod
    def from_state(cls, state: dict) -> "VLModel":
        if META_KEY not in state:
            raise CheckpointError("checkpoint lacks meta.config")
        cfg = ModelConfig.from_vector(state[META_KEY])
        params = {k: Tensor(v) for k, v in state.items() if k != META_KEY}
        expected = cls.init(cfg).params
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise CheckpointError(f"checkpoint tensors mismatch; missing={missing} extra={extra}")
        for k, t in params.items():
            if t.shape != expected[k].shape:
                raise CheckpointError(f"{k}: shape {t.shape}, expected {expected[k].shape}")
        return cls(cfg, params)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VLModel":
        return cls.from_state(checkpoint.load(path))

    # forward -----------------------------------------------------------

    def image_tokens(self, image, resolution: int | None = None) -> Tensor:
        img = image if isinstance(image, ImageGrid) else ImageGrid(image)
        if resolution is not None and (img.height, img.width) != (resolution, resolution):
            img = resize_nearest(img, resolution)
        p = self.config.vit.patch_size
        if img.height % p or img.width % p:
            raise ShapeMismatch(f"image {img.height}x{img.width} not divisible by patch {p}")
        grid = (img.height // p, img.width // p)
        feats = encode_image(img, self.config.vit, self.params)
        return adapt(feats, self.config.adapter, self.params, grid=grid)

    def video_fragment(self, video) -> MixedSequence:
        if not self.config.video:
            raise ShapeMismatch("model was built without the video extra conv")
        if isinstance(video, (str, os.PathLike)):
            video = select_frames(read_manifest(video))
        bundle = load_frames(video if isinstance(video, FrameBundle) else FrameBundle(*video))
        return encode_video(bundle, self.config.vit, self.params, self.config.video_adapter,
                            self.tokenizer)

    def build_sequence(self, prompt_ids, answer_ids=(), image=None, video=None,
                       resolution: int | None = None) -> MixedSequence:
        vision = None
        if image is not None:
            vision = self.image_tokens(image, resolution)
        elif video is not None:
            vision = self.video_fragment(video)
        return assemble_sequence(prompt_ids, vision, answer_ids, self.params["dec.embed"])

    def forward(self, seq: MixedSequence) -> Tensor:
        return decoder_forward(seq, self.config.decoder, self.params)

    def prompt_ids(self, prompt: str) -> list[int]:
        return self.tokenizer.encode(prompt, bos=True)

    def generate(self, prompt: str, image=None, video=None, max_tokens: int = 32) -> str:
        """Greedy decoding; recomputes the full sequence each step (no KV cache)."""
        out: list[int] = []
        with no_record():
            pid = self.prompt_ids(prompt)
            vision = None
            if image is not None:
                vision = self.image_tokens(image, self.config.image_resolution)
            elif video is not None:
                vision = self.video_fragment(video)
            for _ in range(max_tokens):
                seq = assemble_sequence(pid, vision, out, self.params["dec.embed"])
                logits = self.forward(seq).data[-1]
                nxt = int(np.argmax(logits))
                if nxt == EOS:
                    break
                out.append(nxt)
        return self.tokenizer.decode(out)
