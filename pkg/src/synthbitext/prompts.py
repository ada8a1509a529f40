"""Few-shot prompt construction and structured-response parsing.

Three prompt templates are supported, one per task:

* ``mt`` -- Italian-to-Ladin translation requests as a JSON document with a
  ``"translations"`` array whose ``"Ladin"`` fields the model fills in,
* ``sa`` -- sentiment labeling of Ladin reviews, answered as a bracketed
  integer list,
* ``mcqa`` -- multiple-choice answering, also answered as a bracketed list.

Prompt construction is deterministic: identical bank and queries yield a
byte-identical prompt.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from typing import Sequence

from .corpus import MCQAEntry, ParallelPair, SAEntry

TASKS = ("mt", "sa", "mcqa")

MT_HEADER = (
    "Here are examples of translations in a JSON format between Italian and "
    "Ladin with the Val Badia variant:"
)
MT_FOOTER = (
    "Please provide the translation of the following {n} entries in the JSON "
    "format, filling the empty 'Ladin' fields for each entry. Do not include "
    "any additional explanations or text:"
)
SA_HEADER = (
    "Below are Tripadvisor reviews in Ladin (Val Badia variant) along with "
    "their sentiment labels:"
)
SA_FOOTER = (
    "Please classify the sentiment for the following {n} Tripadvisor reviews "
    "in Ladin (Val Badia variant) as either 0 (Positive) or 1 (Negative). "
    "Fill in the empty 'label' fields with only 0 or 1. Respond with the "
    "sentiment labels in list format like this: [x, x, ...]. Do not include "
    "any additional explanations or text."
)
MCQA_HEADER = (
    "Below are multiple-choice questions in Ladin (Val Badia variant) with "
    "3, 4, or 5 answer choices. The correct answer is explicitly provided as "
    "an id number corresponding to the order of the choices:"
)
MCQA_FOOTER = (
    "Please answer the questions based on the available choices, by filling "
    "in the empty 'answer' fields with the id number corresponding to the "
    "order of the choices. Provide the answers in a list format like this: "
    "[x, x, x, ..., x]. Do not include any additional explanations or text."
)

#: The translation template asks for this many entries per request.
MT_QUERIES_PER_PROMPT = 15


class ResponseParseError(ValueError):
    """The model response cannot be interpreted; keeps the raw text for audit."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ResponseCountError(ResponseParseError):
    """Parsed fine, but the number of answers is wrong."""


class ResponseValueError(ResponseParseError):
    """Parsed fine, but a label or answer index is out of range."""


@dataclass(frozen=True)
class FslExampleBank:
    """Task-typed exemplars plus how many of them go into each prompt.

    ``examples`` holds :class:`ParallelPair` for ``mt``, :class:`SAEntry`
    for ``sa`` and :class:`MCQAEntry` for ``mcqa``.
    """

    task: str
    examples: tuple
    shots: int

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.examples:
            raise ValueError("example bank must not be empty")
        if not 1 <= self.shots <= len(self.examples):
            raise ValueError(
                f"shots={self.shots} must be between 1 and {len(self.examples)} examples"
            )
        expected = {"mt": ParallelPair, "sa": SAEntry, "mcqa": MCQAEntry}[self.task]
        if not all(isinstance(e, expected) for e in self.examples):
            raise ValueError(f"task {self.task!r} expects {expected.__name__} examples")

    def select(self, rng: random.Random | None = None) -> tuple:
        """The exemplars for one prompt: the first ``shots`` examples, or a
        seeded sample when ``rng`` is given (resampling is a config knob;
        fixed selection is the default)."""
        if rng is None:
            return self.examples[: self.shots]
        return tuple(rng.sample(self.examples, self.shots))


def _mt_block(rows: list[dict]) -> str:
    return json.dumps({"translations": rows}, indent=4, ensure_ascii=False)


def _sa_item(text: str, label: int | None) -> str:
    rendered_label = "" if label is None else str(label)
    return f"[review: {json.dumps(text, ensure_ascii=False)}, label: {rendered_label}]"


def _mcqa_item(question: str, choices: Sequence[str], answer: int | None) -> str:
    rendered = ", ".join(repr(c) for c in choices)
    rendered_answer = "" if answer is None else str(answer)
    return f"[question: {question}, choices: [{rendered}], answer: {rendered_answer}]"


def _brace_block(items: list[str]) -> str:
    return "{\n" + ", ".join(items) + "\n}"


def build_fsl_prompt(
    bank: FslExampleBank,
    queries: Sequence,
    rng: random.Random | None = None,
    mt_queries_per_prompt: int = MT_QUERIES_PER_PROMPT,
) -> str:
    """Render the few-shot prompt for ``bank.task``.

    Queries are plain texts for ``mt`` (source sentences) and ``sa``
    (reviews), and :class:`MCQAEntry` for ``mcqa`` (the answer field is
    ignored and left empty in the prompt). The translation template is
    fixed at ``mt_queries_per_prompt`` queries per request.
    """
    if not queries:
        raise ValueError("queries must not be empty")
    shots = bank.select(rng)
    if bank.task == "mt":
        if len(queries) != mt_queries_per_prompt:
            raise ValueError(
                f"the translation template asks for exactly {mt_queries_per_prompt} "
                f"entries per prompt, got {len(queries)}"
            )
        example_rows = [{"Italian": p.src, "Ladin": p.tgt} for p in shots]
        query_rows = [{"Italian": text, "Ladin": ""} for text in queries]
        return "\n\n".join(
            [
                MT_HEADER,
                _mt_block(example_rows),
                MT_FOOTER.format(n=len(queries)),
                _mt_block(query_rows),
            ]
        )
    if bank.task == "sa":
        example_items = [_sa_item(e.text, e.label) for e in shots]
        query_items = [_sa_item(text, None) for text in queries]
        return "\n\n".join(
            [
                SA_HEADER,
                _brace_block(example_items),
                SA_FOOTER.format(n=len(queries)),
                _brace_block(query_items),
            ]
        )
    example_items = [_mcqa_item(e.question, e.choices, e.answer) for e in shots]
    query_items = [_mcqa_item(e.question, e.choices, None) for e in queries]
    return "\n\n".join(
        [
            MCQA_HEADER,
            _brace_block(example_items),
            MCQA_FOOTER,
            _brace_block(query_items),
        ]
    )


_FENCE = re.compile(r"^```[a-zA-Z0-9_-]*\n(.*)\n?```\s*$", re.DOTALL)
_INT_LIST = re.compile(r"\[([^\[\]]*)\]")


def _strip_fences(raw: str) -> str:
    stripped = raw.strip()
    fenced = _FENCE.match(stripped)
    return fenced.group(1).strip() if fenced else stripped


def parse_fsl_response(
    raw: str,
    task: str,
    expected_n: int,
    choice_counts: Sequence[int] | None = None,
) -> list:
    """Parse a model response for ``task`` into exactly ``expected_n`` answers.

    ``mt`` responses must be the JSON document from the prompt with the
    ``"Ladin"`` fields filled; ``sa``/``mcqa`` responses must contain a
    bracketed integer list. Surrounding whitespace and Markdown code fences
    are tolerated. ``choice_counts``, when given for ``mcqa``, bounds each
    answer index by its question's choice count.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if expected_n < 1:
        raise ValueError("expected_n must be >= 1")
    body = _strip_fences(raw)
    if task == "mt":
        return _parse_mt(body, raw, expected_n)
    values = _parse_int_list(body, raw)
    if len(values) != expected_n:
        raise ResponseCountError(
            f"expected {expected_n} answers, got {len(values)}", raw=raw
        )
    if task == "sa":
        bad = [v for v in values if v not in (0, 1)]
        if bad:
            raise ResponseValueError(f"labels out of range: {bad}", raw=raw)
    else:
        if any(v < 0 for v in values):
            raise ResponseValueError("negative answer index", raw=raw)
        if choice_counts is not None:
            if len(choice_counts) != expected_n:
                raise ValueError("choice_counts must align with expected_n")
            bad = [
                (i, v) for i, (v, n) in enumerate(zip(values, choice_counts)) if v >= n
            ]
            if bad:
                raise ResponseValueError(f"answer indexes out of range: {bad}", raw=raw)
    return values


def _parse_mt(body: str, raw: str, expected_n: int) -> list[str]:
    try:
        document = json.loads(body)
    except json.JSONDecodeError:
        start, end = body.find("{"), body.rfind("}")
        if start == -1 or end <= start:
            raise ResponseParseError("no JSON object in translation response", raw=raw)
        try:
            document = json.loads(body[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ResponseParseError(f"invalid JSON in response: {exc.msg}", raw=raw) from exc
    rows = document.get("translations") if isinstance(document, dict) else None
    if not isinstance(rows, list):
        raise ResponseParseError("response has no 'translations' array", raw=raw)
    if len(rows) != expected_n:
        raise ResponseCountError(
            f"expected {expected_n} translations, got {len(rows)}", raw=raw
        )
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or not isinstance(row.get("Ladin"), str):
            raise ResponseParseError(f"entry {i} has no 'Ladin' string field", raw=raw)
        out.append(row["Ladin"])
    return out


def _parse_int_list(body: str, raw: str) -> list[int]:
    found = _INT_LIST.search(body)
    if not found:
        raise ResponseParseError("no bracketed answer list in response", raw=raw)
    inner = found.group(1).strip()
    if not inner:
        raise ResponseParseError("answer list is empty", raw=raw)
    values = []
    for piece in inner.split(","):
        piece = piece.strip()
        if not re.fullmatch(r"-?\d+", piece):
            raise ResponseParseError(f"non-integer answer {piece!r}", raw=raw)
        values.append(int(piece))
    return values
