"""Prompt templates for the temporal-grounding QA generator, verbatim.

``{images_caption}`` is the single substitution slot; it is replaced
literally (the templates contain other braces, so ``str.format`` is not
usable).
"""
from __future__ import annotations

import json

from ..errors import EmptyCaptions

PLACEHOLDER = "{images_caption}"

CAPTION_PROMPT = "Give out the detailed description of this image."

SCENE_FILTER_TEMPLATE = (
    'We extracted several frames from this video and described each '
    'frame using an image caption model, stored in the dictionary '
    'variable `image_captions: Dict[str:str]`. In `image_captions`, '
    'the key is the second at which the image appears in the video, '
    'and the value is a detailed description of the image at that '
    'moment. Our image captions may contain hallucinations and errors. '
    'If you find any information that seems incorrect, please ignore '
    'the erroneous information. image_captions={images_caption}\n'
    'Please determine whether there are significant scene changes '
    'in each second of the video based on the frame descriptions. '
    'If there are significant changes, output "Yes"; otherwise, output '
    '"No".For example, if the description continuously mentions a '
    'pool scene or a kitchen scene, then return "No". If the description '
    'first mentions an indoor scene and then a beach scene, then return '
    '"Yes". Output your final answers directly. Do not give out your '
    'reason.'
)

QA_TEMPLATE = (
    'We extracted several frames from this video and described each '
    'frame using an image caption model, stored in the dictionary '
    'variable `image_captions: Dict[str:str]`. In `image_captions`, '
    'the key is the second at which the image appears in the video, '
    'and the value is a detailed description of the image at that '
    'moment. You will play two roles: a human asking a question related '
    'to the biggest change in the video and an intelligent chatbot '
    'designed for video understanding.Your question and answer should '
    'be based on the information provided by `image_captions`.\n'
    'image_captions={images_caption}\n'
    'Please generate the response in the form of a Python dictionary '
    'string with keys "Human" for question and "Bot" for answer. Each '
    'corresponding value should be the question and answer text respectively. '
    'For example, your response should look like this: {"Human": "Your '
    'question here...", "Bot": "Your answer here..."}. Do not mention '
    'variables like `image_captions` in your response. Always generate '
    'the question and the answer as if you are directly looking at '
    'the video.The questions you generate should focus on the biggest '
    'scene change. Do not generate questions that can be easily answered '
    'from a single image. Here are some examples of what we expect:\n'
    'Example 1: {"Human": "At what second does the girl appear?", '
    '"Bot": "The girl appears at the 3rd second in the video."}\n'
    'Example 2: {"Human": "When does the video switch from the swimming '
    'pool to the grass?", "Bot": "At the 3rd second."}\n'
    'Example 3: {"Human": "When does a significant scene change occur '
    'in the video? ", "Bot": "At the 10th second, the scene changes '
    'from the playground to the classroom."}\n'
    'If you think it is not possible to generate such questions and '
    'answers from the given image captions, output "None" directly. '
    'Keep your answers concise and accurate and generate only one '
    'question and answer pair. '
)


def render_captions(captions) -> str:
    """``{"0": "caption", "3": "caption"}``: quoted decimal seconds, ascending."""
    if not captions:
        raise EmptyCaptions("no captions to render")
    items = sorted(captions.items())
    return "{" + ", ".join(
        f"{json.dumps(str(int(k)))}: {json.dumps(v, ensure_ascii=False)}" for k, v in items
    ) + "}"


def _fill(template: str, captions) -> str:
    return template.replace(PLACEHOLDER, render_captions(captions), 1)


def render_scene_filter_prompt(captions) -> str:
    return _fill(SCENE_FILTER_TEMPLATE, captions)


def render_qa_prompt(captions) -> str:
    return _fill(QA_TEMPLATE, captions)


def unrender(prompt: str, captions) -> str:
    """Undo the substitution: put the placeholder back where the captions went."""
    rendered = render_captions(captions)
    if prompt.count(rendered) != 1:
        raise ValueError("rendered captions not found exactly once in prompt")
    return prompt.replace(rendered, PLACEHOLDER, 1)
