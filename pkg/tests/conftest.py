"""Shared fixtures: in-process fake transports and dataset builders."""

from __future__ import annotations

import json
import threading

import pytest

from synthbitext.backends import BackendClient, BackendEndpoint, TransportError
from synthbitext.corpus import MCQAEntry, SAEntry


class FakeTransport:
    """Dispatches POSTs to handler functions keyed by URL path.

    ``fail_times`` makes the first n calls raise a transport error, for
    retry tests. Calls are recorded (thread-safely) for assertions.
    """

    def __init__(self, handlers, fail_times: int = 0):
        self.handlers = dict(handlers)
        self.fail_times = fail_times
        self.calls: list[tuple[str, dict]] = []
        self._lock = threading.Lock()

    def post(self, url, payload, timeout, headers):
        path = "/" + url.rsplit("/", 1)[1]
        with self._lock:
            if self.fail_times > 0:
                self.fail_times -= 1
                raise TransportError("injected transient failure")
            self.calls.append((path, json.loads(json.dumps(payload))))
        if path not in self.handlers:
            raise AssertionError(f"no handler for {path}")
        return self.handlers[path](payload)


class ExplodingTransport:
    """Fails the test if anything ever talks to the network."""

    def __init__(self):
        self.used = False

    def post(self, url, payload, timeout, headers):
        self.used = True
        raise AssertionError(f"network use was forbidden, but POST {url} happened")


def reverse_words(text: str) -> str:
    return " ".join(reversed(text.split()))


def reversing_translate(payload: dict) -> dict:
    """Involutive mock translator: reverses word order both ways."""
    return {"translations": [reverse_words(t) for t in payload["texts"]]}


def echo_translate(payload: dict) -> dict:
    return {"translations": list(payload["texts"])}


def identical_embed(dim: int = 4):
    """Embeds every text to the same unit vector (cosine always 1)."""

    def handler(payload: dict) -> dict:
        vector = [1.0] + [0.0] * (dim - 1)
        return {"vectors": [list(vector) for _ in payload["texts"]], "dim": dim}

    return handler


def mapping_embed(table: dict, dim: int):
    """Embeds texts by exact lookup in ``table``."""

    def handler(payload: dict) -> dict:
        return {"vectors": [list(table[t]) for t in payload["texts"]], "dim": dim}

    return handler


def mapping_translate(table: dict):
    """Translates by exact lookup, echoing texts that are not in the table."""

    def handler(payload: dict) -> dict:
        return {"translations": [table.get(t, t) for t in payload["texts"]]}

    return handler


def tail_chat(payload: dict) -> dict:
    """Identity rewrite mock: returns whatever follows the instruction."""
    return {"text": payload["prompt"].split("\n\n", 1)[1]}


def make_endpoint(kind: str, name: str | None = None, **overrides) -> BackendEndpoint:
    settings = dict(
        base_url="http://mock.invalid",
        timeout=5.0,
        max_retries=2,
        batch_size=8,
        max_in_flight=1,
    )
    settings.update(overrides)
    return BackendEndpoint(name=name or kind, kind=kind, **settings)


def make_client(kind: str, handlers: dict, fail_times: int = 0, **endpoint_overrides):
    transport = FakeTransport(handlers, fail_times=fail_times)
    client = BackendClient(
        make_endpoint(kind, **endpoint_overrides),
        transport=transport,
        backoff_base=0.0,
        sleep=lambda _: None,
    )
    return client, transport


def make_sa_dataset(n: int, words_per_entry: int = 6) -> tuple[SAEntry, ...]:
    """Distinct-text SA entries with a constant per-entry word count."""
    entries = []
    for i in range(n):
        words = [f"w{i}x{j}" for j in range(words_per_entry)]
        entries.append(SAEntry(id=f"sa{i:04d}", text=" ".join(words), label=i % 3 % 2))
    return tuple(entries)


def make_mcqa_dataset(n: int, choice_counts=(3, 4, 5)) -> tuple[MCQAEntry, ...]:
    entries = []
    for i in range(n):
        k = choice_counts[i % len(choice_counts)]
        entries.append(
            MCQAEntry(
                id=f"q{i:04d}",
                question=f"what is thing {i} called exactly",
                choices=tuple(f"option {i} {j}" for j in range(k)),
                answer=i % k,
            )
        )
    return tuple(entries)


@pytest.fixture
def fixed_clock():
    return lambda: 0.0
