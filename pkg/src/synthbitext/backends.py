"""Clients for the external model services: translation, embedding, chat.

The wire protocol is owned by this package (HTTP/JSON, UTF-8):

* ``POST {base_url}/translate`` ``{"texts": [...], "src_lang": "...",
  "tgt_lang": "..."}`` -> ``{"translations": [...]}``
* ``POST {base_url}/embed`` ``{"texts": [...]}`` ->
  ``{"vectors": [[...]], "dim": n}``
* ``POST {base_url}/generate`` ``{"prompt": "..."}`` -> ``{"text": "..."}``

Clients split inputs into ``batch_size`` chunks, retry transient failures
with exponential backoff, optionally run several batches in flight, and
always reassemble results in input order. API keys come from the
``CF_<NAME>_KEY`` environment variable per endpoint and are sent as a bearer
token. Every raw response can be persisted to an audit log for
reproducibility.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .metrics import EmbeddingVector

log = logging.getLogger(__name__)

ENDPOINT_KINDS = ("translate", "embed", "chat")

#: Resource path per endpoint kind.
_PATHS = {"translate": "/translate", "embed": "/embed", "chat": "/generate"}


class TransportError(RuntimeError):
    """Network-level failure (connection problems, timeouts, 5xx, 429)."""


class ProtocolError(RuntimeError):
    """The server answered, but not with what the protocol promises."""


@dataclass(frozen=True)
class BackendEndpoint:
    """Connection settings for one external model service."""

    name: str
    base_url: str
    kind: str
    timeout: float = 30.0
    max_retries: int = 2
    batch_size: int = 16
    max_in_flight: int = 1

    def __post_init__(self):
        if self.kind not in ENDPOINT_KINDS:
            raise ValueError(f"endpoint {self.name!r}: unknown kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError(f"endpoint {self.name!r}: batch_size must be >= 1")
        if self.max_retries < 0:
            raise ValueError(f"endpoint {self.name!r}: max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError(f"endpoint {self.name!r}: max_in_flight must be >= 1")

    @property
    def api_key_env(self) -> str:
        return f"CF_{self.name.upper()}_KEY"

    def url(self) -> str:
        return self.base_url.rstrip("/") + _PATHS[self.kind]


class Transport(Protocol):
    """Anything that can POST a JSON payload and give back a JSON object."""

    def post(self, url: str, payload: dict, timeout: float, headers: dict) -> dict: ...


class HttpTransport:
    """Default transport over ``requests`` with a shared session."""

    def __init__(self, session=None):
        import requests

        self._requests = requests
        self.session = session or requests.Session()

    def post(self, url: str, payload: dict, timeout: float, headers: dict) -> dict:
        try:
            response = self.session.post(url, json=payload, timeout=timeout, headers=headers)
        except self._requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"POST {url} returned HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ProtocolError(
                f"POST {url} rejected with HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"POST {url} returned non-JSON body") from exc
        if not isinstance(body, dict):
            raise ProtocolError(f"POST {url} returned a non-object JSON body")
        return body


class AuditLog:
    """Append-only JSONL log of raw requests and responses."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record(self, endpoint: str, url: str, request: dict, response: dict) -> None:
        line = json.dumps(
            {
                "ts": time.time(),
                "endpoint": endpoint,
                "url": url,
                "request": request,
                "response": response,
            },
            ensure_ascii=False,
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")


class BackendClient:
    """Batching, retrying client bound to one :class:`BackendEndpoint`.

    ``sleep`` and ``backoff_base`` exist so tests can run retries without
    waiting; retry state is per request, so a client instance may be shared
    across threads.
    """

    def __init__(
        self,
        endpoint: BackendEndpoint,
        transport: Transport | None = None,
        audit_log: AuditLog | None = None,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.transport = transport if transport is not None else HttpTransport()
        self.audit_log = audit_log
        self.backoff_base = backoff_base
        self._sleep = sleep

    # -- public operations -------------------------------------------------

    def translate_batch(self, texts: Sequence[str], src_lang: str, tgt_lang: str) -> list[str]:
        """Translate ``texts``; output[i] is the translation of texts[i]."""
        self._require_kind("translate")
        if not texts:
            raise ValueError("translate_batch requires a non-empty text list")
        results: list[str | None] = [None] * len(texts)

        def handle(start: int, chunk: list[str]) -> None:
            body = self._post(
                {"texts": chunk, "src_lang": src_lang, "tgt_lang": tgt_lang},
                batch_range=(start, start + len(chunk)),
            )
            translations = body.get("translations")
            if not isinstance(translations, list) or len(translations) != len(chunk):
                got = len(translations) if isinstance(translations, list) else "none"
                raise ProtocolError(
                    f"endpoint {self.endpoint.name!r}: batch [{start}:{start + len(chunk)}] "
                    f"asked for {len(chunk)} translations, got {got}"
                )
            if not all(isinstance(t, str) for t in translations):
                raise ProtocolError(
                    f"endpoint {self.endpoint.name!r}: non-string translation in batch "
                    f"[{start}:{start + len(chunk)}]"
                )
            results[start : start + len(chunk)] = translations

        self._run_batches(list(texts), handle)
        return results  # type: ignore[return-value]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed ``texts``; vectors come back in input order with uniform dim."""
        self._require_kind("embed")
        if not texts:
            raise ValueError("embed_batch requires a non-empty text list")
        results: list[EmbeddingVector | None] = [None] * len(texts)

        def handle(start: int, chunk: list[str]) -> None:
            body = self._post({"texts": chunk}, batch_range=(start, start + len(chunk)))
            vectors = body.get("vectors")
            dim = body.get("dim")
            if not isinstance(vectors, list) or len(vectors) != len(chunk):
                raise ProtocolError(
                    f"endpoint {self.endpoint.name!r}: batch [{start}:{start + len(chunk)}] "
                    f"asked for {len(chunk)} vectors, got "
                    f"{len(vectors) if isinstance(vectors, list) else 'none'}"
                )
            for offset, raw in enumerate(vectors):
                if not isinstance(raw, list) or (dim is not None and len(raw) != dim):
                    raise ProtocolError(
                        f"endpoint {self.endpoint.name!r}: vector {start + offset} does not "
                        f"match declared dim {dim}"
                    )
                if any(not isinstance(v, (int, float)) or not math.isfinite(v) for v in raw):
                    raise ProtocolError(
                        f"endpoint {self.endpoint.name!r}: non-finite value in vector "
                        f"{start + offset}"
                    )
                results[start + offset] = EmbeddingVector(tuple(float(v) for v in raw))

        self._run_batches(list(texts), handle)
        dims = {v.dim for v in results}  # type: ignore[union-attr]
        if len(dims) > 1:
            raise ProtocolError(
                f"endpoint {self.endpoint.name!r}: non-uniform embedding dims {sorted(dims)}"
            )
        return results  # type: ignore[return-value]

    def generate(self, prompt: str) -> str:
        """Single chat completion for ``prompt``."""
        self._require_kind("chat")
        body = self._post({"prompt": prompt}, batch_range=(0, 1))
        text = body.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"endpoint {self.endpoint.name!r}: response has no 'text' field")
        return text

    # -- internals ----------------------------------------------------------

    def _require_kind(self, kind: str) -> None:
        if self.endpoint.kind != kind:
            raise ValueError(
                f"endpoint {self.endpoint.name!r} has kind {self.endpoint.kind!r}, "
                f"but a {kind!r} endpoint is required"
            )

    def _headers(self) -> dict:
        key = os.environ.get(self.endpoint.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _post(self, payload: dict, batch_range: tuple[int, int]) -> dict:
        url = self.endpoint.url()
        delay = self.backoff_base
        attempts = self.endpoint.max_retries + 1
        for attempt in range(attempts):
            try:
                body = self.transport.post(
                    url, payload, timeout=self.endpoint.timeout, headers=self._headers()
                )
            except TransportError as exc:
                if attempt + 1 == attempts:
                    raise TransportError(
                        f"endpoint {self.endpoint.name!r}: giving up on items "
                        f"[{batch_range[0]}:{batch_range[1]}] after {attempts} attempts: {exc}"
                    ) from exc
                log.warning(
                    "endpoint %r: attempt %d/%d failed (%s); retrying in %.2fs",
                    self.endpoint.name,
                    attempt + 1,
                    attempts,
                    exc,
                    delay,
                )
                self._sleep(delay)
                delay *= 2.0
                continue
            if self.audit_log is not None:
                self.audit_log.record(self.endpoint.name, url, payload, body)
            return body
        raise AssertionError("unreachable")

    def _run_batches(self, items: list, handle: Callable[[int, list], None]) -> None:
        chunks = [
            (start, items[start : start + self.endpoint.batch_size])
            for start in range(0, len(items), self.endpoint.batch_size)
        ]
        if self.endpoint.max_in_flight == 1 or len(chunks) == 1:
            for start, chunk in chunks:
                handle(start, chunk)
            return
        with ThreadPoolExecutor(max_workers=self.endpoint.max_in_flight) as pool:
            futures = [pool.submit(handle, start, chunk) for start, chunk in chunks]
            for future in futures:
                future.result()


def translate_batch(
    client: BackendClient, texts: Sequence[str], src_lang: str, tgt_lang: str
) -> list[str]:
    return client.translate_batch(texts, src_lang, tgt_lang)


def embed_batch(client: BackendClient, texts: Sequence[str]) -> list[EmbeddingVector]:
    return client.embed_batch(texts)


def llm_rewrite(client: BackendClient, texts: Sequence[str], instruction: str) -> list[str]:
    """Rewrite each text with a chat model; one output per input, in order.

    Used for the optional grammar-correction preprocessing stage; the prompt
    is ``instruction`` and the text separated by a blank line.
    """
    client._require_kind("chat")
    if not instruction.strip():
        raise ValueError("llm_rewrite requires a non-empty instruction")
    return [client.generate(f"{instruction}\n\n{text}") for text in texts]
