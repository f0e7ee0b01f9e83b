"""Model clients for the QA generator.

A client exposes ``complete(prompt, image=None) -> str``.  Two are provided:
a deterministic mock keyed by request digest, and an HTTP client that POSTs
``{"prompt": ...}`` (plus ``"image"`` for captioning calls) and reads
``{"text": ...}`` back.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import time
from typing import Callable, Mapping, Protocol

import numpy as np

from ..errors import ClientFailure, TransientClientError

log = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5
TOKEN_ENV = "VISEXPERT_API_TOKEN"


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def _pixels(image) -> np.ndarray:
    return image.pixels if hasattr(image, "pixels") else np.asarray(image, dtype=np.float64)


def request_bytes(prompt: str, image=None) -> bytes:
    """Bytes hashed for a request: the UTF-8 prompt, then for image requests
    ``b"\\0CGIMG"``, the C/H/W extents as u32 LE and the pixels as f32 LE."""
    data = prompt.encode("utf-8")
    if image is not None:
        px = _pixels(image)
        data += b"\0CGIMG" + struct.pack("<3I", *px.shape) + np.ascontiguousarray(px, dtype="<f4").tobytes()
    return data


def request_digest(prompt: str, image=None) -> str:
    return f"{fnv1a64(request_bytes(prompt, image)):016x}"


class ModelClient(Protocol):
    def complete(self, prompt: str, image=None) -> str: ...


class MockClient:
    """Replays scripted responses keyed by :func:`request_digest`.

    A ``"*"`` entry, if present, answers any request without its own entry.
    Unknown requests raise :class:`ClientFailure`.
    """

    def __init__(self, responses: Mapping[str, str]):
        self.responses = dict(responses)
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockClient":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise ClientFailure(f"{path}: mock file must map digests to response strings")
        return cls(data)

    def complete(self, prompt: str, image=None) -> str:
        key = request_digest(prompt, image)
        self.calls.append(key)
        if key in self.responses:
            return self.responses[key]
        if "*" in self.responses:
            return self.responses["*"]
        raise ClientFailure(f"mock has no response for request {key}")


def with_retries(call: Callable[[], str], attempts: int = RETRY_ATTEMPTS,
                 base_delay: float = RETRY_BASE_DELAY, sleep=time.sleep) -> str:
    """Retry transient failures with doubling backoff; other errors pass through."""
    delay = base_delay
    for attempt in range(1, attempts + 1):
        try:
            return call()
        except TransientClientError as exc:
            if attempt == attempts:
                raise ClientFailure(f"giving up after {attempts} attempts: {exc}") from exc
            log.warning("transient client failure (attempt %d/%d): %s", attempt, attempts, exc)
            sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


class HttpClient:
    def __init__(self, url: str, token: str | None = None, timeout: float = 60.0,
                 transport=None):
        import httpx

        self._httpx = httpx
        self.url = url
        token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, body: dict) -> str:
        httpx = self._httpx
        try:
            resp = self._client.post(self.url, json=body)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientClientError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientClientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ClientFailure(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ClientFailure("response body lacks a 'text' field") from exc
        if not isinstance(text, str):
            raise ClientFailure("response 'text' is not a string")
        return text

    def complete(self, prompt: str, image=None) -> str:
        body: dict = {"prompt": prompt}
        if image is not None:
            px = _pixels(image)
            body["image"] = {"shape": list(px.shape), "data": px.reshape(-1).tolist()}
        return self._post(body)

    def close(self):
        self._client.close()


def client_from_spec(spec: str) -> ModelClient:
    """``mock:FILE`` or ``http:URL`` (the URL may itself start with http:// or https://)."""
    if spec.startswith(("http://", "https://")):
        return HttpClient(spec)
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise ValueError(f"client spec must be mock:FILE or http:URL, got {spec!r}")
    if kind == "mock":
        return MockClient.from_file(rest)
    if kind == "http":
        return HttpClient(rest)
    raise ValueError(f"unknown client kind {kind!r}")
