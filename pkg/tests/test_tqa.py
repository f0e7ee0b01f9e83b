import json
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import pytest

import tqa_fixture
import verbatim
from visexpert.errors import (AmbiguousFilterResponse, ClientFailure, DuplicateSecond,
                              EmptyCaptions, ParseError, TransientClientError)
from visexpert.tqa import (CAPTION_PROMPT, QA_TEMPLATE, SCENE_FILTER_TEMPLATE, CaptionMap,
                           HttpClient, MockClient, caption_frames, client_from_spec, filter_scene,
                           fnv1a64, parse_qa_response, render_captions, request_digest, run_pipeline)
from visexpert.tqa.clients import with_retries
from visexpert.tqa.pipeline import frames_for_captioning, read_records, second_key
from visexpert.tqa.prompts import PLACEHOLDER, render_qa_prompt, render_scene_filter_prompt, unrender
from visexpert.video import FrameBundle, synthetic_manifest

GOLDEN = Path(__file__).parent / "golden"


def golden_prompt(name):
    return verbatim.decode_block((GOLDEN / f"{name}.raw.txt").read_text(encoding="utf-8"))


# templates ------------------------------------------------------------------------

def test_templates_equal_typeset_blocks():
    assert CAPTION_PROMPT == golden_prompt("caption_prompt")
    assert SCENE_FILTER_TEMPLATE == golden_prompt("scene_filter_prompt")
    assert QA_TEMPLATE == golden_prompt("qa_prompt")


def test_single_placeholder():
    assert SCENE_FILTER_TEMPLATE.count(PLACEHOLDER) == 1
    assert QA_TEMPLATE.count(PLACEHOLDER) == 1


def test_verbatim_decoder_rules():
    assert verbatim.decode_block('a \nb\nc \\"d\\" e" "f\\ng') == 'a b\nc "d" ef\ng'


def test_render_captions_format():
    assert render_captions({3: "a pool"}) == '{"3": "a pool"}'
    assert render_captions({5: "b", 0: 'say "hi"'}) == '{"0": "say \\"hi\\"", "5": "b"}'
    with pytest.raises(EmptyCaptions):
        render_captions({})


@pytest.mark.parametrize("render,template", [(render_scene_filter_prompt, SCENE_FILTER_TEMPLATE),
                                             (render_qa_prompt, QA_TEMPLATE)])
def test_rendered_prompt_unrenders_to_template(render, template):
    caps = CaptionMap({0: "a kitchen", 3: "a pool", 7: "a {braced} beach"})
    prompt = render(caps)
    assert 'image_captions={"0": "a kitchen", "3": "a pool", "7": "a {braced} beach"}' in prompt
    assert unrender(prompt, caps).encode() == template.encode()


def test_single_caption_substitution():
    prompt = render_qa_prompt({3: "a pool"})
    assert prompt == QA_TEMPLATE.replace(PLACEHOLDER, '{"3": "a pool"}')


# QA parsing --------------------------------------------------------------------------

EXAMPLE_1 = ('{"Human": "At what second does the girl appear?", '
             '"Bot": "The girl appears at the 3rd second in the video."}')


def test_parse_example_from_template():
    assert EXAMPLE_1 in QA_TEMPLATE
    assert parse_qa_response(EXAMPLE_1) == ("At what second does the girl appear?",
                                            "The girl appears at the 3rd second in the video.")


def test_parse_none_sentinel():
    assert parse_qa_response("None") is None
    assert parse_qa_response("  None\n") is None


def test_parse_fenced():
    assert parse_qa_response("```json\n" + EXAMPLE_1 + "\n```")[1].startswith("The girl")


@pytest.mark.parametrize("bad", ['{"Q": "x", "A": "y"}', '{"Human": "x"}', "not json",
                                 '{"Human": "x", "Bot": ""}', '["Human", "Bot"]',
                                 '{"Human": "x", "Bot": "y", "Extra": "z"}'])
def test_parse_rejects(bad):
    with pytest.raises(ParseError):
        parse_qa_response(bad)


# filter ---------------------------------------------------------------------------------

@pytest.mark.parametrize("reply,expected", [("Yes", True), (" yes.\n", True), ("NO", False),
                                            ("No!", False)])
def test_filter_normalisation(reply, expected):
    assert filter_scene({0: "a"}, MockClient({"*": reply})) is expected


def test_filter_ambiguous():
    with pytest.raises(AmbiguousFilterResponse):
        filter_scene({0: "a"}, MockClient({"*": "Maybe"}))


# captions ---------------------------------------------------------------------------------

def test_caption_keys_from_timestamps():
    frames = tuple(f for _, f in synthetic_manifest(3, size=4))
    caps = caption_frames(FrameBundle(frames, (0.0, 3.0, 5.0)), MockClient({"*": "a red car"}))
    assert list(caps) == [0, 3, 5]
    assert set(caps.values()) == {"a red car"}


def test_caption_duplicate_second():
    frames = tuple(f for _, f in synthetic_manifest(2, size=4))
    with pytest.raises(DuplicateSecond):
        caption_frames(FrameBundle(frames, (1.2, 1.4)), MockClient({"*": "x"}))


def test_caption_map_validation():
    with pytest.raises(DuplicateSecond):
        CaptionMap({3: "a", 1: "b"})
    with pytest.raises(EmptyCaptions):
        CaptionMap({0: "  "})


def test_second_key_half_up():
    assert [second_key(t) for t in (0.0, 0.49, 0.5, 2.5, 3.7)] == [0, 0, 1, 3, 4]


def test_frames_for_captioning_dedups_seconds():
    entries = [(i * 0.25, f"f{i}") for i in range(40)]  # 10 seconds at 4 fps
    b = frames_for_captioning(entries, 24)
    keys = [second_key(t) for t in b.timestamps]
    assert keys == sorted(set(keys))
    assert len(b) <= 24


# clients -----------------------------------------------------------------------------------

def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_mock_digest_keys_and_default():
    key = request_digest("hello")
    client = MockClient({key: "hi", "*": "fallback"})
    assert client.complete("hello") == "hi"
    assert client.complete("other") == "fallback"
    assert client.calls == [key, request_digest("other")]
    with pytest.raises(ClientFailure):
        MockClient({}).complete("x")


def test_mock_image_changes_digest():
    img = np.zeros((1, 2, 2))
    assert request_digest("p", img) != request_digest("p")
    assert request_digest("p", img) != request_digest("p", img + 0.5)


def test_retries_with_backoff():
    delays, calls = [], []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise TransientClientError("busy")
        return "ok"

    assert with_retries(flaky, sleep=delays.append) == "ok"
    assert delays == [0.5, 1.0]


def test_retries_give_up():
    def always():
        raise TransientClientError("busy")

    with pytest.raises(ClientFailure):
        with_retries(always, attempts=3, sleep=lambda s: None)


def test_http_client_posts_and_retries(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"text": "a caption"})

    monkeypatch.setattr("time.sleep", lambda s: None)
    client = HttpClient("http://svc/complete", token="tok", transport=httpx.MockTransport(handler))
    assert with_retries(lambda: client.complete("describe", image=np.zeros((1, 1, 2))),
                        sleep=lambda s: None) == "a caption"
    body = json.loads(seen[-1].content)
    assert body == {"prompt": "describe", "image": {"shape": [1, 1, 2], "data": [0.0, 0.0]}}
    assert seen[-1].headers["authorization"] == "Bearer tok"


def test_http_client_permanent_error():
    client = HttpClient("http://svc/", transport=httpx.MockTransport(lambda r: httpx.Response(400)))
    with pytest.raises(ClientFailure) as info:
        client.complete("x")
    assert not isinstance(info.value, TransientClientError)


def test_client_from_spec(tmp_path):
    (tmp_path / "m.json").write_text('{"*": "x"}')
    assert isinstance(client_from_spec(f"mock:{tmp_path / 'm.json'}"), MockClient)
    assert isinstance(client_from_spec("http://localhost:1/x"), HttpClient)
    with pytest.raises(ValueError):
        client_from_spec("ftp:thing")


# pipeline --------------------------------------------------------------------------------

def test_end_to_end_matches_golden(tmp_path):
    mdir, cap, llm = tqa_fixture.build(tmp_path)
    summary = run_pipeline(mdir, cap, llm, tmp_path / "out.jsonl", max_concurrency=3)
    assert (tmp_path / "out.jsonl").read_bytes() == (GOLDEN / "tqa_e2e.jsonl").read_bytes()
    assert int(summary) == 2
    assert (summary.videos, summary.kept, summary.filtered, summary.no_qa) == (4, 3, 1, 1)
    recs = list(read_records(tmp_path / "out.jsonl"))
    assert [r.video_id for r in recs] == ["v1_beach", "v4_street"]


def test_end_to_end_deterministic_across_concurrency(tmp_path):
    mdir, cap, llm = tqa_fixture.build(tmp_path)
    outs = []
    for k in (1, 4):
        run_pipeline(mdir, cap, llm, tmp_path / f"o{k}.jsonl", max_concurrency=k)
        outs.append((tmp_path / f"o{k}.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_keep_and_reject(tmp_path):
    mdir, cap, llm = tqa_fixture.build(tmp_path)
    paths = [mdir / "v1_beach.txt", mdir / "v2_kitchen.txt"]
    summary = run_pipeline(paths, cap, llm, tmp_path / "o.jsonl")
    assert (summary.written, summary.kept, summary.filtered) == (1, 1, 1)


def test_malformed_qa_counts_parse_errors(tmp_path):
    mdir, cap, _ = tqa_fixture.build(tmp_path)
    llm = MockClient({"*": "Yes"})
    summary = run_pipeline(mdir, cap, llm, tmp_path / "o.jsonl")
    assert summary.written == 0 and summary.parse_errors == 4
    assert (tmp_path / "o.jsonl").read_text() == ""


class SlowCounting:
    def __init__(self, inner):
        self.inner, self.lock = inner, threading.Lock()
        self.active = self.peak = 0

    def complete(self, prompt, image=None):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.01)
        try:
            return self.inner.complete(prompt, image)
        finally:
            with self.lock:
                self.active -= 1


@pytest.mark.parametrize("k", [1, 2])
def test_concurrency_limit(tmp_path, k):
    mdir, cap, llm = tqa_fixture.build(tmp_path)
    counter = SlowCounting(cap)
    run_pipeline(mdir, counter, llm, tmp_path / "o.jsonl", max_concurrency=k)
    assert counter.peak <= k


def test_client_failure_isolated(tmp_path):
    mdir, _, llm = tqa_fixture.build(tmp_path)
    summary = run_pipeline(mdir, MockClient({}), llm, tmp_path / "o.jsonl")
    assert summary.client_errors == 4 and summary.written == 0
