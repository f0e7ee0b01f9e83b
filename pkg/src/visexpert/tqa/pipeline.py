"""Temporal-grounding QA generation.

Per video: sample frames, caption each one, ask an LLM whether the scene
changes enough to be worth a question, and if so ask it for one
time-anchored question/answer pair.  Videos are processed concurrently;
records are written sorted by video id so output bytes do not depend on
completion order.
"""
from __future__ import annotations

import json
import logging
import math
import os
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from ..errors import (AmbiguousFilterResponse, ClientFailure, ContractError,
                      DuplicateSecond, EmptyCaptions, ParseError)
from ..video import FrameBundle, load_frames, read_manifest, select_frames
from .clients import ModelClient, with_retries
from .prompts import CAPTION_PROMPT, render_qa_prompt, render_scene_filter_prompt

log = logging.getLogger(__name__)

PIPELINE_FRAMES = 24


class CaptionMap(dict):
    """Integer second -> caption, keys ascending, captions non-empty."""

    def __init__(self, items=()):
        super().__init__()
        for k, v in dict(items).items():
            self[k] = v

    def __setitem__(self, key, value):
        if not isinstance(key, int) or isinstance(key, bool):
            raise TypeError("caption keys are integer seconds")
        if self and key <= max(self):
            raise DuplicateSecond(f"second {key} is not after {max(self)}")
        if not isinstance(value, str) or not value.strip():
            raise EmptyCaptions(f"caption for second {key} is empty")
        super().__setitem__(key, value)


@dataclass(frozen=True)
class TQARecord:
    video_id: str
    question: str
    answer: str

    def __post_init__(self):
        if not self.question or not self.answer:
            raise ParseError("question and answer must be non-empty")

    def to_json(self) -> str:
        return json.dumps({"video": self.video_id, "question": self.question,
                           "answer": self.answer}, ensure_ascii=False)


def second_key(timestamp: float) -> int:
    """Round half up to the nearest whole second."""
    return int(math.floor(timestamp + 0.5))


def caption_frames(bundle: FrameBundle, client: ModelClient, **retry) -> CaptionMap:
    keys = [second_key(t) for t in bundle.timestamps]
    for a, b in zip(keys, keys[1:]):
        if a == b:
            raise DuplicateSecond(f"two frames map to second {a}")
    bundle = load_frames(bundle)
    captions = CaptionMap()
    for key, frame in zip(keys, bundle.frames):
        text = with_retries(lambda: client.complete(CAPTION_PROMPT, image=frame), **retry)
        if not text.strip():
            raise ClientFailure(f"empty caption for second {key}")
        captions[key] = text
    return captions


def _normalise(text: str) -> str:
    return text.strip().lower().rstrip(string.punctuation + " ")


def filter_scene(captions, client: ModelClient, **retry) -> bool:
    """True when the LLM reports a significant scene change."""
    prompt = render_scene_filter_prompt(captions)
    reply = _normalise(with_retries(lambda: client.complete(prompt), **retry))
    if reply == "yes":
        return True
    if reply == "no":
        return False
    raise AmbiguousFilterResponse(f"filter reply {reply!r} is neither yes nor no")


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        first_nl = text.find("\n")
        text = text[first_nl + 1:] if first_nl != -1 else text[3:]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def parse_qa_response(text: str) -> tuple[str, str] | None:
    """``None`` for the "None" sentinel, else the (question, answer) pair."""
    body = _strip_fences(text)
    if body == "None":
        return None
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(f"QA reply is not JSON: {exc.msg}") from None
    if not isinstance(obj, dict) or set(obj) != {"Human", "Bot"}:
        raise ParseError("QA reply must be an object with exactly 'Human' and 'Bot'")
    q, a = obj["Human"], obj["Bot"]
    if not (isinstance(q, str) and isinstance(a, str) and q.strip() and a.strip()):
        raise ParseError("'Human' and 'Bot' must be non-empty strings")
    return q, a


def frames_for_captioning(entries, n: int = PIPELINE_FRAMES) -> FrameBundle:
    """Uniformly sample up to ``n`` frames, at most one per whole second."""
    bundle = select_frames(entries, n)
    frames, stamps, seen = [], [], set()
    for fr, t in zip(bundle.frames, bundle.timestamps):
        key = second_key(t)
        if key in seen:
            continue
        seen.add(key)
        frames.append(fr)
        stamps.append(t)
    return FrameBundle(tuple(frames), tuple(stamps))


@dataclass
class PipelineSummary:
    videos: int = 0
    kept: int = 0
    filtered: int = 0
    written: int = 0
    no_qa: int = 0
    parse_errors: int = 0
    ambiguous: int = 0
    client_errors: int = 0
    invalid: int = 0

    def __int__(self):
        return self.written

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class _Outcome:
    video_id: str
    status: str
    record: TQARecord | None = None


def process_video(video_id: str, manifest: str | os.PathLike, caption_client: ModelClient,
                  llm_client: ModelClient, n_frames: int = PIPELINE_FRAMES) -> _Outcome:
    try:
        bundle = frames_for_captioning(read_manifest(manifest), n_frames)
        captions = caption_frames(bundle, caption_client)
        if not filter_scene(captions, llm_client):
            return _Outcome(video_id, "filtered")
        reply = with_retries(lambda: llm_client.complete(render_qa_prompt(captions)))
        try:
            qa = parse_qa_response(reply)
        except ParseError:
            return _Outcome(video_id, "parse_error")
        if qa is None:
            return _Outcome(video_id, "no_qa")
        return _Outcome(video_id, "written", TQARecord(video_id, *qa))
    except AmbiguousFilterResponse:
        return _Outcome(video_id, "ambiguous")
    except (ClientFailure, OSError) as exc:
        log.warning("video %s aborted: %s", video_id, exc)
        return _Outcome(video_id, "client_error")
    except (ContractError, ValueError) as exc:
        log.warning("video %s skipped: %s", video_id, exc)
        return _Outcome(video_id, "invalid")


def discover_manifests(manifests) -> list[tuple[str, Path]]:
    """A directory (every regular file; stem = video id) or an iterable of paths."""
    if isinstance(manifests, (str, os.PathLike)) and Path(manifests).is_dir():
        paths = [p for p in Path(manifests).iterdir() if p.is_file()]
    else:
        paths = [Path(p) for p in manifests]
    found = sorted((p.stem, p) for p in paths)
    ids = [vid for vid, _ in found]
    if len(set(ids)) != len(ids):
        raise ValueError("two manifests share a video id")
    return found


_STATUS_FIELD = {"filtered": "filtered", "no_qa": "no_qa", "parse_error": "parse_errors",
                 "ambiguous": "ambiguous", "client_error": "client_errors", "invalid": "invalid"}


def run_pipeline(manifests, caption_client: ModelClient, llm_client: ModelClient,
                 out_path: str | os.PathLike, max_concurrency: int = 4,
                 n_frames: int = PIPELINE_FRAMES) -> PipelineSummary:
    """Generate QA records for every manifest and write them as JSON Lines.

    ``int(result)`` is the number of records written.
    """
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be >= 1")
    videos = discover_manifests(manifests)
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        futures = [pool.submit(process_video, vid, path, caption_client, llm_client, n_frames)
                   for vid, path in videos]
        outcomes = [f.result() for f in futures]

    summary = PipelineSummary(videos=len(outcomes))
    lines = []
    for out in sorted(outcomes, key=lambda o: o.video_id):
        if out.status in ("written", "no_qa", "parse_error"):
            summary.kept += 1
        if out.status == "written":
            summary.written += 1
            lines.append(out.record.to_json() + "\n")
        else:
            field = _STATUS_FIELD[out.status]
            setattr(summary, field, getattr(summary, field) + 1)
    Path(out_path).write_text("".join(lines), encoding="utf-8")
    log.info("tqa summary: %s", summary.to_json())
    return summary


def read_records(path: str | os.PathLike) -> Iterable[TQARecord]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                yield TQARecord(obj["video"], obj["question"], obj["answer"])
