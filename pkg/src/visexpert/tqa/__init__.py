"""Automated temporal-grounding QA data generation."""
from .clients import HttpClient, MockClient, client_from_spec, fnv1a64, request_digest
from .pipeline import (CaptionMap, PipelineSummary, TQARecord, caption_frames, filter_scene,
                       parse_qa_response, run_pipeline)
from .prompts import (CAPTION_PROMPT, QA_TEMPLATE, SCENE_FILTER_TEMPLATE, render_captions,
                      render_qa_prompt, render_scene_filter_prompt)

__all__ = [
    "CAPTION_PROMPT", "CaptionMap", "HttpClient", "MockClient", "PipelineSummary", "QA_TEMPLATE",
    "SCENE_FILTER_TEMPLATE", "TQARecord", "caption_frames", "client_from_spec", "filter_scene",
    "fnv1a64", "parse_qa_response", "render_captions", "render_qa_prompt",
    "render_scene_filter_prompt", "request_digest", "run_pipeline",
]
