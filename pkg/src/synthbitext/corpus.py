"""Data model, JSONL persistence, preprocessing and descriptive statistics.

Three record kinds flow through the toolkit:

* ``sa`` -- sentiment-labeled review texts,
* ``mcqa`` -- multiple-choice questions with a 0-based answer index,
* ``parallel`` -- aligned source/target sentence pairs.

Datasets are immutable tuples of frozen dataclass entries, so they are safe
to share across threads and to reuse as dict keys in caches. All file I/O is
JSONL (UTF-8, one record per line) with a fixed key order, so saving a loaded
dataset reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

KINDS = ("sa", "mcqa", "parallel")

#: JSONL key order per kind; also the closed set of accepted keys ("id" may
#: be omitted and is then auto-assigned from the line number).
_FIELD_ORDER = {
    "sa": ("id", "text", "label"),
    "mcqa": ("id", "question", "choices", "answer"),
    "parallel": ("id", "src", "tgt", "src_lang", "tgt_lang"),
}


class DatasetError(ValueError):
    """A record violates its schema or an invariant.

    ``line`` is the 1-based line number when the failure is tied to a
    specific line of a JSONL file.
    """

    def __init__(self, message: str, *, line: int | None = None, path: str | Path | None = None):
        self.line = line
        self.path = str(path) if path is not None else None
        prefix = ""
        if self.path is not None:
            prefix = f"{self.path}:"
        if line is not None:
            prefix += f"line {line}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class SAEntry:
    """A review text with sentiment label (0 = positive, 1 = negative)."""

    id: str
    text: str
    label: int

    def __post_init__(self):
        _check_id(self.id)
        if not self.text.strip():
            raise DatasetError(f"entry {self.id!r}: text is empty")
        if isinstance(self.label, bool) or self.label not in (0, 1):
            raise DatasetError(f"entry {self.id!r}: label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class MCQAEntry:
    """A multiple-choice question; ``answer`` indexes into ``choices`` (0-based)."""

    id: str
    question: str
    choices: tuple[str, ...]
    answer: int

    def __post_init__(self):
        _check_id(self.id)
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.question.strip():
            raise DatasetError(f"entry {self.id!r}: question is empty")
        if len(self.choices) < 2:
            raise DatasetError(f"entry {self.id!r}: needs at least 2 choices")
        if any(not c.strip() for c in self.choices):
            raise DatasetError(f"entry {self.id!r}: empty choice text")
        if len(set(self.choices)) != len(self.choices):
            raise DatasetError(f"entry {self.id!r}: choices are not pairwise distinct")
        if isinstance(self.answer, bool) or not 0 <= self.answer < len(self.choices):
            raise DatasetError(
                f"entry {self.id!r}: answer {self.answer!r} out of range for "
                f"{len(self.choices)} choices"
            )


@dataclass(frozen=True)
class ParallelPair:
    """An aligned source/target sentence pair."""

    id: str
    src: str
    tgt: str
    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        _check_id(self.id)
        if not self.src.strip() or not self.tgt.strip():
            raise DatasetError(f"pair {self.id!r}: src and tgt must be non-empty")
        if self.src_lang == self.tgt_lang:
            raise DatasetError(f"pair {self.id!r}: src_lang equals tgt_lang ({self.src_lang!r})")


Entry = Union[SAEntry, MCQAEntry, ParallelPair]
Dataset = tuple  # tuple of one entry kind

_ENTRY_TYPES = {"sa": SAEntry, "mcqa": MCQAEntry, "parallel": ParallelPair}


def _check_id(value) -> None:
    if not isinstance(value, str) or not value:
        raise DatasetError(f"id must be a non-empty string, got {value!r}")


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def kind_of(entry: Entry) -> str:
    """Dataset kind string for an entry instance."""
    for kind, cls in _ENTRY_TYPES.items():
        if isinstance(entry, cls):
            return kind
    raise TypeError(f"not a dataset entry: {type(entry).__name__}")


def word_count(text: str) -> int:
    """Number of maximal whitespace-delimited tokens (Unicode whitespace)."""
    return len(text.split())


def char_count(text: str) -> int:
    """Number of Unicode scalar values, internal spaces included."""
    return len(text)


def auto_id(line_number: int) -> str:
    """Deterministic id for records that carry none: zero-padded line number."""
    return f"{line_number:06d}"


def record_to_entry(record: dict, kind: str, *, line: int | None = None, path=None) -> Entry:
    """Build a typed entry from a parsed JSON record, strictly validating keys."""
    _check_kind(kind)
    fields = _FIELD_ORDER[kind]
    unknown = set(record) - set(fields)
    if unknown:
        raise DatasetError(
            f"unexpected keys {sorted(unknown)} for kind {kind!r}", line=line, path=path
        )
    missing = [f for f in fields if f != "id" and f not in record]
    if missing:
        raise DatasetError(f"missing keys {missing} for kind {kind!r}", line=line, path=path)
    values = dict(record)
    if "id" not in values:
        if line is None:
            raise DatasetError("record has no id and no line number to derive one from")
        values["id"] = auto_id(line)
    _expect_types(values, kind, line=line, path=path)
    try:
        return _ENTRY_TYPES[kind](**values)
    except DatasetError as exc:
        raise DatasetError(str(exc), line=line, path=path) from exc


def _expect_types(values: dict, kind: str, *, line, path) -> None:
    def fail(msg):
        raise DatasetError(msg, line=line, path=path)

    if kind == "sa":
        if not isinstance(values["text"], str):
            fail("'text' must be a string")
        if isinstance(values["label"], bool) or not isinstance(values["label"], int):
            fail("'label' must be an integer")
    elif kind == "mcqa":
        if not isinstance(values["question"], str):
            fail("'question' must be a string")
        if not isinstance(values["choices"], list) or not all(
            isinstance(c, str) for c in values["choices"]
        ):
            fail("'choices' must be a list of strings")
        values["choices"] = tuple(values["choices"])
        if isinstance(values["answer"], bool) or not isinstance(values["answer"], int):
            fail("'answer' must be an integer")
    else:
        for key in ("src", "tgt", "src_lang", "tgt_lang"):
            if not isinstance(values[key], str):
                fail(f"'{key}' must be a string")


def entry_to_record(entry: Entry) -> dict:
    """JSON-ready dict in the canonical key order."""
    kind = kind_of(entry)
    record = {}
    for field in _FIELD_ORDER[kind]:
        value = getattr(entry, field)
        record[field] = list(value) if field == "choices" else value
    return record


def load_dataset(path: str | Path, kind: str) -> Dataset:
    """Load a JSONL dataset of the given kind.

    Records are returned in file order. Records without an ``id`` get a
    zero-padded line-number id. Malformed lines, schema mismatches and
    duplicate ids raise :class:`DatasetError` carrying the line number.
    """
    _check_kind(kind)
    path = Path(path)
    entries: list[Entry] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", line=line_no, path=path) from exc
            if not isinstance(record, dict):
                raise DatasetError("record is not a JSON object", line=line_no, path=path)
            explicit_id = "id" in record
            entry = record_to_entry(record, kind, line=line_no, path=path)
            if entry.id in seen:
                kind_msg = "duplicate id" if explicit_id else "auto-assigned id collides"
                raise DatasetError(
                    f"{kind_msg} {entry.id!r} (first seen at line {seen[entry.id]})",
                    line=line_no,
                    path=path,
                )
            seen[entry.id] = line_no
            entries.append(entry)
    return tuple(entries)


def save_dataset(dataset: Sequence[Entry], path: str | Path) -> None:
    """Write a dataset as JSONL with stable key order (atomic replace).

    ``load_dataset(save_dataset(d))`` reproduces ``d`` field for field, and
    re-saving reproduces the file byte for byte.
    """
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
    write_jsonl((entry_to_record(e) for e in dataset), path)


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    """Serialize dicts one per line, preserving key order; atomic replace."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")
    os.replace(tmp, path)


def read_jsonl(path: str | Path) -> list[dict]:
    """Parse a JSONL file into dicts (no schema checks)."""
    out = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                out.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", line=line_no, path=path) from exc
    return out


@dataclass(frozen=True)
class CorpusStats:
    """Descriptive statistics for one dataset.

    ``avg_words_per_entry`` / ``avg_chars_per_entry`` cover all visible text
    of an entry (SA: the review; MCQA: question plus choices; parallel: both
    sides). Kind-specific breakdowns are ``None`` for other kinds.
    """

    kind: str
    entry_count: int
    avg_words_per_entry: float
    avg_chars_per_entry: float
    label_counts: dict[int, int] | None = None
    avg_words_per_question: float | None = None
    avg_chars_per_question: float | None = None
    avg_words_per_choices: float | None = None
    avg_chars_per_choices: float | None = None
    choice_count_freq: dict[int, int] | None = None
    src_avg_words: float | None = None
    src_avg_chars: float | None = None
    tgt_avg_words: float | None = None
    tgt_avg_chars: float | None = None

    def __post_init__(self):
        if self.entry_count <= 0:
            raise DatasetError("stats require a non-empty dataset")
        if self.label_counts is not None and sum(self.label_counts.values()) != self.entry_count:
            raise DatasetError("label counts do not sum to entry count")
        if (
            self.choice_count_freq is not None
            and sum(self.choice_count_freq.values()) != self.entry_count
        ):
            raise DatasetError("choice-count frequencies do not sum to entry count")
        for name in ("avg_words_per_entry", "avg_chars_per_entry"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DatasetError(f"{name} must be a finite non-negative number")

    def to_json_dict(self) -> dict:
        """Single JSON document with the summary-table field names."""
        doc: dict = {"kind": self.kind, "entry_count": self.entry_count}
        if self.kind == "sa":
            doc["avg_words_per_entry"] = self.avg_words_per_entry
            doc["avg_chars_per_entry"] = self.avg_chars_per_entry
            doc["positive_label_count"] = self.label_counts.get(0, 0)
            doc["negative_label_count"] = self.label_counts.get(1, 0)
        elif self.kind == "mcqa":
            doc["avg_words_per_question"] = self.avg_words_per_question
            doc["avg_chars_per_question"] = self.avg_chars_per_question
            doc["avg_words_per_choices"] = self.avg_words_per_choices
            doc["avg_chars_per_choices"] = self.avg_chars_per_choices
            doc["choice_count_freq"] = {
                str(k): v for k, v in sorted(self.choice_count_freq.items())
            }
        else:
            doc["src_avg_words"] = self.src_avg_words
            doc["src_avg_chars"] = self.src_avg_chars
            doc["tgt_avg_words"] = self.tgt_avg_words
            doc["tgt_avg_chars"] = self.tgt_avg_chars
        return doc


def _mean(values: list) -> float:
    return sum(values) / len(values)


def compute_corpus_stats(dataset: Sequence[Entry]) -> CorpusStats:
    """Arithmetic means of word/char counts plus kind-specific tallies."""
    if not dataset:
        raise DatasetError("stats require a non-empty dataset")
    kind = kind_of(dataset[0])
    if kind == "sa":
        labels: dict[int, int] = {}
        for e in dataset:
            labels[e.label] = labels.get(e.label, 0) + 1
        return CorpusStats(
            kind=kind,
            entry_count=len(dataset),
            avg_words_per_entry=_mean([word_count(e.text) for e in dataset]),
            avg_chars_per_entry=_mean([char_count(e.text) for e in dataset]),
            label_counts=labels,
        )
    if kind == "mcqa":
        freq: dict[int, int] = {}
        for e in dataset:
            freq[len(e.choices)] = freq.get(len(e.choices), 0) + 1
        q_words = [word_count(e.question) for e in dataset]
        q_chars = [char_count(e.question) for e in dataset]
        c_words = [sum(word_count(c) for c in e.choices) for e in dataset]
        c_chars = [sum(char_count(c) for c in e.choices) for e in dataset]
        return CorpusStats(
            kind=kind,
            entry_count=len(dataset),
            avg_words_per_entry=_mean([q + c for q, c in zip(q_words, c_words)]),
            avg_chars_per_entry=_mean([q + c for q, c in zip(q_chars, c_chars)]),
            avg_words_per_question=_mean(q_words),
            avg_chars_per_question=_mean(q_chars),
            avg_words_per_choices=_mean(c_words),
            avg_chars_per_choices=_mean(c_chars),
            choice_count_freq=freq,
        )
    return CorpusStats(
        kind=kind,
        entry_count=len(dataset),
        avg_words_per_entry=_mean([word_count(e.src) + word_count(e.tgt) for e in dataset]),
        avg_chars_per_entry=_mean([char_count(e.src) + char_count(e.tgt) for e in dataset]),
        src_avg_words=_mean([word_count(e.src) for e in dataset]),
        src_avg_chars=_mean([char_count(e.src) for e in dataset]),
        tgt_avg_words=_mean([word_count(e.tgt) for e in dataset]),
        tgt_avg_chars=_mean([char_count(e.tgt) for e in dataset]),
    )


def q3_length_filter(
    dataset: Sequence[SAEntry], cutoff: int | None = None
) -> tuple[Dataset, int]:
    """Keep entries whose word count is at most the third-quartile cutoff.

    When ``cutoff`` is ``None`` it is derived from the data as the
    nearest-rank 75th percentile of per-entry word counts (the value at
    1-based rank ``ceil(0.75 * n)`` in sorted order). Passing the returned
    cutoff back in makes re-application a no-op, which is how the pipeline
    replays the stage deterministically on resume.
    """
    if not dataset:
        raise DatasetError("cannot derive a length cutoff from an empty dataset")
    counts = [word_count(e.text) for e in dataset]
    if cutoff is None:
        rank = math.ceil(0.75 * len(counts))
        cutoff = sorted(counts)[rank - 1]
    retained = tuple(e for e, c in zip(dataset, counts) if c <= cutoff)
    return retained, cutoff


def drop_choice_counts(
    dataset: Sequence[MCQAEntry], excluded: frozenset[int] | set[int] = frozenset({2, 6})
) -> Dataset:
    """Drop questions whose number of choices is in ``excluded`` (order kept)."""
    excluded = frozenset(excluded)
    return tuple(e for e in dataset if len(e.choices) not in excluded)
