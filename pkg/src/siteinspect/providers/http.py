"""JSON-over-HTTP provider client.

Wire contract (one endpoint serves every capability)::

    POST <endpoint_url>
    Authorization: Bearer $<api_key_ref>        (when api_key_ref is set)
    {"model_id": str, "capability": str, "payload": {...}}

    200 {"output": <value>}  |  {"error": {"message": str}}

Binary payload fields are base64 strings. Capabilities and payloads:

    caption_image       {"image_b64"}             -> str
    transcribe_audio    {"audio_b64"}             -> str
    embed_text          {"text"}                  -> [float]
    embed_query_tokens  {"text", "tokens"}        -> [[float] * 128] per token
    embed_page          {"page_id", "image_b64"}  -> [[float] * 128] per patch
    generate_report     {"prompt", "context"}     -> str

5xx responses, timeouts and connection errors are retried with exponential
backoff (0.5 s, 1 s, 2 s, ...); 4xx and ``error`` bodies fail immediately.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import asdict
from typing import Any, Callable

import httpx

from siteinspect.errors import ProviderError, ProviderTimeoutError
from siteinspect.providers.base import ProviderConfig, ReportPrompt

logger = logging.getLogger(__name__)

BACKOFF_START = 0.5
BACKOFF_FACTOR = 2.0


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class HttpProvider:
    def __init__(
        self,
        config: ProviderConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.model_id = config.model_id
        self._sleep = sleep
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_concurrent_requests)

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        ref = self.config.api_key_ref
        if not ref:
            return {}
        key = os.environ.get(ref)
        if not key:
            raise ProviderError(f"environment variable {ref} is not set", attempts=0)
        return {"Authorization": f"Bearer {key}"}

    def call(self, capability: str, payload: dict[str, Any]) -> Any:
        body = {"model_id": self.config.model_id, "capability": capability, "payload": payload}
        headers = self._headers()
        attempts = self.config.max_retries + 1
        last: ProviderError | None = None
        for attempt in range(1, attempts + 1):
            try:
                with self._slots:
                    resp = self._client.post(self.config.endpoint_url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = ProviderTimeoutError(f"{capability}: timed out: {exc}", attempts=attempt)
            except httpx.TransportError as exc:
                last = ProviderError(f"{capability}: transport error: {exc}", attempts=attempt)
            else:
                if resp.status_code >= 500:
                    last = ProviderError(
                        f"{capability}: HTTP {resp.status_code}", status=resp.status_code, attempts=attempt
                    )
                elif resp.status_code >= 400:
                    raise ProviderError(
                        f"{capability}: HTTP {resp.status_code}: {resp.text[:200]}",
                        status=resp.status_code,
                        attempts=attempt,
                    )
                else:
                    return self._output(capability, resp, attempt)
            if attempt < attempts:
                delay = BACKOFF_START * BACKOFF_FACTOR ** (attempt - 1)
                logger.debug("%s attempt %d failed (%s); retrying in %.1fs", capability, attempt, last, delay)
                self._sleep(delay)
        assert last is not None
        raise last

    @staticmethod
    def _output(capability: str, resp: httpx.Response, attempt: int) -> Any:
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProviderError(f"{capability}: response is not JSON", status=resp.status_code, attempts=attempt) from exc
        if not isinstance(data, dict):
            raise ProviderError(f"{capability}: response must be a JSON object", status=resp.status_code, attempts=attempt)
        if "error" in data:
            err = data["error"]
            msg = err.get("message", err) if isinstance(err, dict) else err
            raise ProviderError(f"{capability}: provider error: {msg}", status=resp.status_code, attempts=attempt)
        if "output" not in data:
            raise ProviderError(f"{capability}: response lacks 'output'", status=resp.status_code, attempts=attempt)
        return data["output"]

    def caption_image(self, image: bytes) -> str:
        return self.call("caption_image", {"image_b64": _b64(image)})

    def transcribe_audio(self, audio: bytes) -> str:
        return self.call("transcribe_audio", {"audio_b64": _b64(audio)})

    def embed_text(self, text: str):
        return self.call("embed_text", {"text": text})

    def embed_query_tokens(self, tokens: list[str], text: str):
        return self.call("embed_query_tokens", {"text": text, "tokens": tokens})

    def embed_page(self, page_id: str, image: bytes):
        return self.call("embed_page", {"page_id": page_id, "image_b64": _b64(image)})

    def generate_report(self, prompt: ReportPrompt) -> str:
        context = asdict(prompt)
        rendered = context.pop("rendered")
        return self.call("generate_report", {"prompt": rendered, "context": context})
