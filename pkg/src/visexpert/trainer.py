"""Training stages: configs and presets, answer-span loss, freezing, batch
mixing, progressive resolution and an Adam loop that writes a checkpoint and
a loss trace.

Global batches are simulated on one machine by accumulating per-record
gradients: ``global_batch = micro_batch * accumulation_steps``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .decoder import MixedSequence
from .errors import (EmptyDataset, EmptyTarget, InvalidConfig, InvalidSequence,
                     UnknownGroup)
from .model import PARAM_GROUPS, VLModel, group_of
from .tensor import Tape, Tensor, backward, ops
from .vision import read_cgimg

log = logging.getLogger(__name__)

SHORT_ANSWER_PREFIX = "Short Answer: "
ADAM_BETAS = (0.9, 0.95)
ADAM_EPS = 1e-8
VIT_GROUP = "vit"


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    answer: str
    answer_type: int = 1  # 0 = concise answer, 1 = free-form response
    image: object = None
    video: object = None

    def __post_init__(self):
        if not self.answer:
            raise InvalidConfig("answer must be non-empty")
        if self.answer_type not in (0, 1):
            raise InvalidConfig(f"answer_type must be 0 or 1, got {self.answer_type!r}")

    @classmethod
    def from_json(cls, obj: dict, base: Path | None = None) -> "SftRecord":
        def resolve(p):
            if p is None or base is None:
                return p
            return base / p
        return cls(prompt=obj["prompt"], answer=obj["answer"], answer_type=int(obj["type"]),
                   image=resolve(obj.get("image")), video=resolve(obj.get("video")))


def load_dataset(path: str | os.PathLike) -> list[SftRecord]:
    """JSON Lines, one record per line: prompt, answer, type, optional image/video."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(SftRecord.from_json(json.loads(line), base))
    return records


def apply_short_answer_prefix(rec: SftRecord) -> SftRecord:
    if rec.answer_type != 0 or rec.answer.startswith(SHORT_ANSWER_PREFIX):
        return rec
    return replace(rec, answer=SHORT_ANSWER_PREFIX + rec.answer)


def mask_loss(logits: Tensor, seq: MixedSequence, answer_span: tuple[int, int]) -> Tensor:
    """Mean next-token cross-entropy over the answer positions ``[start, stop)``.

    The token at position ``p`` is scored from the logits at ``p - 1``; every
    other position contributes nothing.
    """
    start, stop = answer_span
    if stop <= start:
        raise EmptyTarget("answer span is empty")
    L = len(seq)
    if start < 1 or stop > L:
        raise InvalidSequence(f"answer span {answer_span} outside 1..{L}")
    if seq.vision[start:stop].any():
        raise InvalidSequence("answer span covers vision positions")
    targets = np.full(L, -1, dtype=np.int64)
    weights = np.zeros(L)
    targets[start - 1:stop - 1] = seq.token_ids[start:stop]
    weights[start - 1:stop - 1] = 1.0
    return ops.cross_entropy(logits, targets, weights)


@dataclass(frozen=True)
class StageConfig:
    lr: float
    global_batch: int
    steps: int
    trainable_groups: frozenset = frozenset(PARAM_GROUPS)
    vit_lr_ratio: float = 0.1
    resolution_schedule: tuple = ()
    text_mix_ratio: float = 0.0
    seed: int = 0
    micro_batch: int | None = None
    default_resolution: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trainable_groups", frozenset(self.trainable_groups))
        sched = tuple((int(s), int(r)) for s, r in self.resolution_schedule)
        object.__setattr__(self, "resolution_schedule", sched)
        if not self.lr > 0:
            raise InvalidConfig(f"lr must be > 0, got {self.lr}")
        if self.steps < 1 or self.global_batch < 1:
            raise InvalidConfig("steps and global_batch must be >= 1")
        if not 0.0 <= self.text_mix_ratio <= 1.0:
            raise InvalidConfig("text_mix_ratio must lie in [0, 1]")
        if sched:
            starts = [s for s, _ in sched]
            if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
                raise InvalidConfig("resolution_schedule start steps must increase strictly from 0")
        unknown = self.trainable_groups - set(PARAM_GROUPS)
        if unknown:
            raise UnknownGroup(f"unknown parameter groups {sorted(unknown)}")
        if self.micro_batch is not None and (self.micro_batch < 1 or self.global_batch % self.micro_batch):
            raise InvalidConfig("micro_batch must divide global_batch")

    @property
    def accumulation_steps(self) -> int:
        return self.global_batch // (self.micro_batch or self.global_batch)

    def to_json(self) -> dict:
        d = asdict(self)
        d["trainable_groups"] = sorted(self.trainable_groups)
        d["resolution_schedule"] = [list(e) for e in self.resolution_schedule]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "StageConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise InvalidConfig(f"unknown stage config keys {sorted(extra)}")
        return cls(**obj)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "StageConfig":
        return cls.from_json(json.loads(text))


ALL_GROUPS = frozenset(PARAM_GROUPS)

PRESETS: dict[str, StageConfig] = {
    # image SFT, stage 1: all parameters, ViT at one tenth of the base rate
    "image-sft-stage1": StageConfig(lr=1e-5, global_batch=2340, steps=3000,
                                    trainable_groups=ALL_GROUPS, name="image-sft-stage1"),
    # stage 2 keeps the stage-1 rate; only batch and length change
    "image-sft-stage2": StageConfig(lr=1e-5, global_batch=1150, steps=750,
                                    trainable_groups=ALL_GROUPS, name="image-sft-stage2"),
    # video instruction tuning then temporal-grounding tuning; batch and steps are
    # placeholders covering one pass over 330k and 30k samples at batch 128
    "video-stage1": StageConfig(lr=4e-6, global_batch=128, steps=2579,
                                trainable_groups=ALL_GROUPS, name="video-stage1"),
    "video-stage2": StageConfig(lr=1e-6, global_batch=128, steps=235,
                                trainable_groups=ALL_GROUPS, name="video-stage2"),
}


def preset(name: str) -> StageConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidConfig(f"no preset named {name!r}; have {sorted(PRESETS)}") from None


def staged_unfreezing(base: StageConfig, group_sets: Iterable[Iterable[str]]) -> list[StageConfig]:
    """One stage per entry, each enabling the listed groups (typically growing)."""
    return [replace(base, trainable_groups=frozenset(g), name=f"{base.name or 'stage'}-{i}")
            for i, g in enumerate(group_sets)]


def lr_for(param_group: str, stage: StageConfig) -> float:
    if param_group not in PARAM_GROUPS:
        raise UnknownGroup(f"unknown parameter group {param_group!r}")
    if param_group not in stage.trainable_groups:
        return 0.0
    if param_group == VIT_GROUP:
        return stage.lr * stage.vit_lr_ratio
    return stage.lr


def trainable_set(stage: StageConfig, model: VLModel) -> frozenset:
    """Names of the tensors the optimizer may update in this stage."""
    unknown = stage.trainable_groups - set(PARAM_GROUPS)
    if unknown:
        raise UnknownGroup(f"unknown parameter groups {sorted(unknown)}")
    return frozenset(n for n in model.params if group_of(n) in stage.trainable_groups)


def _ratio(ratio: float) -> Fraction:
    return Fraction(ratio).limit_denominator(1_000_000)


def text_batch_schedule(ratio: float, n: int, phase: int = 0) -> list[bool]:
    """Bresenham interleave: batch t is text iff floor((t+1)r) > floor(t r)."""
    r = _ratio(ratio)
    out = []
    for t in range(phase, phase + n):
        out.append((r * (t + 1)).__floor__() > (r * t).__floor__())
    return out


def mix_batches(text_stream: Iterable, vl_stream: Iterable, ratio: float,
                seed: int = 0) -> Iterator[tuple[str, object]]:
    """Yield ("text", batch) / ("vl", batch) pairs on a deterministic schedule.

    ``seed`` shifts the schedule's phase.  Stops when the stream that is due
    next runs dry.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InvalidConfig("ratio must lie in [0, 1]")
    r = _ratio(ratio)
    text_it, vl_it = iter(text_stream), iter(vl_stream)
    t = seed % r.denominator if r.denominator > 1 else 0
    while True:
        is_text = (r * (t + 1)).__floor__() > (r * t).__floor__()
        try:
            item = next(text_it if is_text else vl_it)
        except StopIteration:
            return
        yield ("text" if is_text else "vl", item)
        t += 1


def resolution_at(step: int, stage: StageConfig, default: int | None = None) -> int | None:
    res = stage.default_resolution if default is None else default
    for start, r in stage.resolution_schedule:
        if start <= step:
            res = r
        else:
            break
    return res


class Adam:
    """Adam with per-tensor learning rates and no weight decay."""

    def __init__(self, betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lrs: dict[str, float]):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            lr = lrs.get(name, 0.0)
            if lr == 0.0:
                continue
            p = params[name].data
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class StageResult:
    checkpoint: bytes
    trace: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    trace_path: Path | None = None

    @property
    def final_loss(self) -> float:
        return self.trace[-1][1]


def format_trace(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    for step, loss in trace:
        w.writerow([step, f"{loss:.8g}"])
    return buf.getvalue()


def _load_image(img):
    if isinstance(img, (str, os.PathLike)):
        return read_cgimg(img)
    return img


def record_sequence(model: VLModel, rec: SftRecord, resolution: int | None = None):
    """Tokenise a record; returns (sequence, answer_span)."""
    answer_ids = model.tokenizer.encode(rec.answer, eos=True)
    image = _load_image(rec.image)
    seq = model.build_sequence(model.prompt_ids(rec.prompt), answer_ids, image=image,
                               video=rec.video, resolution=resolution)
    L = len(seq)
    return seq, (L - len(answer_ids), L)


def record_loss(model: VLModel, rec: SftRecord, resolution: int | None = None) -> Tensor:
    seq, span = record_sequence(model, rec, resolution)
    return mask_loss(model.forward(seq), seq, span)


class _Cycler:
    """Endless reshuffled pass over a pool of indices."""

    def __init__(self, pool: list[int], rng: np.random.Generator):
        self.pool, self.rng = pool, rng
        self.order: list[int] = []

    def take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if not self.order:
                self.order = [self.pool[i] for i in self.rng.permutation(len(self.pool))]
            out.append(self.order.pop(0))
        return out


def run_stage(model: VLModel, dataset, stage: StageConfig, seed: int | None = None,
              out_dir: str | os.PathLike | None = None) -> StageResult:
    """Run ``stage.steps`` Adam iterations in place on ``model``.

    Each step draws ``global_batch`` records (text-only vs vision batches
    follow ``text_mix_ratio``), averages their answer-span losses and
    updates only the trainable groups.  Writes ``checkpoint.cgv2`` and
    ``loss.csv`` under ``out_dir`` when given.
    """
    records = [apply_short_answer_prefix(r) for r in dataset]
    if not records:
        raise EmptyDataset("dataset has no records")
    seed = stage.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    text_pool = [i for i, r in enumerate(records) if r.image is None and r.video is None]
    vl_pool = [i for i, r in enumerate(records) if r.image is not None or r.video is not None]
    cyclers = {"text": _Cycler(text_pool, rng) if text_pool else None,
               "vl": _Cycler(vl_pool, rng) if vl_pool else None}
    mixing = stage.text_mix_ratio > 0 and text_pool and vl_pool
    schedule = text_batch_schedule(stage.text_mix_ratio, stage.steps) if mixing else None
    single = "text" if not vl_pool else "vl"

    names = sorted(trainable_set(stage, model))
    lrs = {n: lr_for(group_of(n), stage) for n in names}
    watched = [model.params[n] for n in names if lrs[n] > 0]
    for t in model.params.values():
        t.requires_grad = False
    opt = Adam()
    trace = []
    for step in range(stage.steps):
        kind = ("text" if schedule[step] else "vl") if mixing else single
        batch = cyclers[kind].take(stage.global_batch)
        res = resolution_at(step, stage)
        grads = {n: np.zeros_like(model.params[n].data) for n in names if lrs[n] > 0}
        total = 0.0
        scale = 1.0 / len(batch)
        for idx in batch:
            with Tape() as tape:
                tape.watch(*watched)
                loss = record_loss(model, records[idx], res)
            backward(tape, loss)
            total += loss.item()
            for n in grads:
                grads[n] += model.params[n].grad * scale
        mean_loss = total * scale
        trace.append((step, mean_loss))
        log.debug("step %d loss %.6f", step, mean_loss)
        opt.step(model.params, grads, lrs)
    for t in watched:
        t.grad = None

    blob = model.to_bytes()
    result = StageResult(blob, trace)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out / "checkpoint.cgv2"
        result.trace_path = out / "loss.csv"
        result.checkpoint_path.write_bytes(blob)
        result.trace_path.write_text(format_trace(trace), encoding="utf-8")
    return result
