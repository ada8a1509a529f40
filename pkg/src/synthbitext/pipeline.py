"""Synthetic parallel corpus generation with two-stage quality filtering.

The procedure turns a labeled monolingual dataset into a filtered synthetic
bitext in five steps, each checkpointed to disk so an interrupted run can be
resumed and must produce byte-identical outputs:

1. ``preprocess`` -- length/choice-count filtering, optional LLM grammar
   rewrite.
2. ``translate`` -- forward translation into the target language. MCQA
   entries are translated field by field (question and each choice as
   separate backend texts).
3. ``filter_sim`` -- keep entries whose source/translation embedding cosine
   similarity meets a threshold (fixed, or derived as the mean similarity of
   a trusted aligned reference corpus). Inclusive comparison.
4. ``backtranslate`` -- translate the survivors back into the source
   language and score each round trip with sentence BLEU and exact-match
   METEOR against the original text.
5. ``filter_rt`` -- keep entries whose BLEU *and* METEOR reach the
   thresholds; in ``data_mean`` mode each threshold is the arithmetic mean
   of that score over all scored records. Inclusive comparison.

Filtering always scores one decision per entry. MCQA entries are scored on
their newline-joined rendering (question followed by choices), never per
field. Labels and answer indexes ride through translation untouched.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from . import corpus
from .backends import AuditLog, BackendClient, BackendEndpoint, HttpTransport
from .corpus import DatasetError, MCQAEntry, ParallelPair, SAEntry
from .metrics import (
    METRIC_BLEU,
    METRIC_COSINE,
    METRIC_METEOR,
    cosine_similarity,
    meteor,
    sentence_bleu,
)

log = logging.getLogger(__name__)

STAGES = ("preprocess", "translate", "filter_sim", "backtranslate", "filter_rt", "finalize")

#: Score recorded for entries auto-failed at the similarity stage because
#: their forward translation is empty or structurally unusable.
DEGENERATE_COSINE = -1.0

DEFAULT_REWRITE_INSTRUCTION = (
    "Correct any grammatical errors in the following text while preserving "
    "its original meaning. Reply with the corrected text only."
)


class PipelineStageError(RuntimeError):
    """A stage failed; earlier checkpoints are left intact."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class RoundTripRecord:
    """One item's source text, forward translation and back-translation,
    with the round-trip scores. ``cosine`` is ``None`` when the record was
    produced outside a similarity-filtered run."""

    id: str
    src_original: str
    fwd_translation: str
    back_translation: str
    bleu: float
    meteor: float
    cosine: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.bleu <= 100.0:
            raise ValueError(f"record {self.id!r}: bleu {self.bleu} outside [0, 100]")
        if not 0.0 <= self.meteor <= 1.0:
            raise ValueError(f"record {self.id!r}: meteor {self.meteor} outside [0, 1]")
        if self.cosine is not None and not -1.0 <= self.cosine <= 1.0:
            raise ValueError(f"record {self.id!r}: cosine {self.cosine} outside [-1, 1]")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "src_original": self.src_original,
            "fwd_translation": self.fwd_translation,
            "back_translation": self.back_translation,
            "bleu": self.bleu,
            "meteor": self.meteor,
            "cosine": self.cosine,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RoundTripRecord":
        return cls(**record)


@dataclass(frozen=True)
class FilterDecision:
    """Pass/fail verdict for one entry at one filtering stage."""

    id: str
    stage: str  # "similarity" | "roundtrip"
    scores: dict
    thresholds: dict
    passed: bool

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "stage": self.stage,
            "scores": self.scores,
            "thresholds": self.thresholds,
            "passed": self.passed,
        }

    @classmethod
    def from_record(cls, record: dict) -> "FilterDecision":
        return cls(**record)


@dataclass(frozen=True)
class RoundTripThresholds:
    """The BLEU/METEOR cutoffs used by the round-trip filter."""

    mu_bleu: float
    mu_meteor: float
    mode: str  # "data_mean" | "fixed"


def render_flat_text(entry) -> str:
    """The single text used to embed and score an entry.

    SA entries render as the review text itself; MCQA entries as the
    question and each choice joined by single newlines (the answer index is
    never part of the rendering).
    """
    if isinstance(entry, SAEntry):
        return entry.text
    if isinstance(entry, MCQAEntry):
        return "\n".join((entry.question, *entry.choices))
    raise TypeError(f"cannot render {type(entry).__name__}")


def split_flat_text(text: str, n_choices: int) -> tuple[str, tuple[str, ...]]:
    """Invert :func:`render_flat_text` for an MCQA entry with ``n_choices``.

    Assumes the individual fields contain no newlines, which holds for any
    JSONL-sourced dataset this toolkit writes.
    """
    parts = text.split("\n")
    if len(parts) != n_choices + 1:
        raise ValueError(f"expected 1 question + {n_choices} choices, got {len(parts)} lines")
    return parts[0], tuple(parts[1:])


def _auto_ids(n: int) -> list[str]:
    return [corpus.auto_id(i) for i in range(1, n + 1)]


def derive_similarity_threshold(
    reference: Sequence[ParallelPair], embed_client: BackendClient
) -> float:
    """Mean source/target embedding cosine over a trusted aligned corpus."""
    if not reference:
        raise ValueError("cannot derive a similarity threshold from an empty corpus")
    texts = [p.src for p in reference] + [p.tgt for p in reference]
    vectors = embed_client.embed_batch(texts)
    n = len(reference)
    cosines = [cosine_similarity(vectors[i], vectors[n + i]) for i in range(n)]
    return sum(cosines) / n


def filter_similarity(
    items: Sequence[str],
    fwd_translations: Sequence[str],
    embed_client: BackendClient,
    threshold: float,
    ids: Sequence[str] | None = None,
    on_decision: Callable[[FilterDecision], None] | None = None,
) -> tuple[list[int], list[FilterDecision]]:
    """Keep index ``i`` iff ``cosine(embed(items[i]), embed(fwd[i])) >= threshold``.

    Entries whose forward translation is empty are auto-failed with a
    recorded score of -1 and never sent to the embedding backend. Decisions
    are produced for every input, in input order; ``on_decision`` sees each
    one as soon as it is computed, so callers can persist partial progress
    before a backend failure propagates.
    """
    if len(items) != len(fwd_translations):
        raise ValueError(
            f"length mismatch: {len(items)} items vs {len(fwd_translations)} translations"
        )
    if ids is None:
        ids = _auto_ids(len(items))
    elif len(ids) != len(items):
        raise ValueError("ids must align with items")

    decisions: list[FilterDecision] = []
    retained: list[int] = []

    def emit(decision: FilterDecision, index: int) -> None:
        decisions.append(decision)
        if decision.passed:
            retained.append(index)
        if on_decision is not None:
            on_decision(decision)

    group_size = embed_client.endpoint.batch_size
    pending: list[tuple[int, str, str]] = []

    def flush() -> None:
        if not pending:
            return
        texts = [src for _, src, _ in pending] + [fwd for _, _, fwd in pending]
        vectors = embed_client.embed_batch(texts)
        half = len(pending)
        for offset, (index, _, _) in enumerate(pending):
            score = cosine_similarity(vectors[offset], vectors[half + offset])
            emit(
                FilterDecision(
                    id=ids[index],
                    stage="similarity",
                    scores={METRIC_COSINE: score},
                    thresholds={METRIC_COSINE: threshold},
                    passed=score >= threshold,
                ),
                index,
            )
        pending.clear()

    for index, (src, fwd) in enumerate(zip(items, fwd_translations)):
        if not fwd.strip():
            flush()  # keep decision order aligned with input order
            emit(
                FilterDecision(
                    id=ids[index],
                    stage="similarity",
                    scores={METRIC_COSINE: DEGENERATE_COSINE},
                    thresholds={METRIC_COSINE: threshold},
                    passed=False,
                ),
                index,
            )
            continue
        pending.append((index, src, fwd))
        if len(pending) >= group_size:
            flush()
    flush()
    return retained, decisions


def make_roundtrip_records(
    ids: Sequence[str],
    src_texts: Sequence[str],
    fwd_texts: Sequence[str],
    back_texts: Sequence[str],
    cosines: Sequence[float] | None = None,
) -> list[RoundTripRecord]:
    """Score aligned (source, forward, back) triples into round-trip records."""
    if not len(ids) == len(src_texts) == len(fwd_texts) == len(back_texts):
        raise ValueError("ids, sources, forward and back translations must align")
    if cosines is not None and len(cosines) != len(ids):
        raise ValueError("cosines must align with ids")
    records = []
    for i, item_id in enumerate(ids):
        records.append(
            RoundTripRecord(
                id=item_id,
                src_original=src_texts[i],
                fwd_translation=fwd_texts[i],
                back_translation=back_texts[i],
                bleu=sentence_bleu(back_texts[i], src_texts[i]),
                meteor=meteor(back_texts[i], src_texts[i]),
                cosine=None if cosines is None else cosines[i],
            )
        )
    return records


def back_translate(
    items: Sequence[str],
    fwd_translations: Sequence[str],
    translate_client: BackendClient,
    src_lang: str,
    tgt_lang: str,
    ids: Sequence[str] | None = None,
    cosines: Sequence[float] | None = None,
) -> list[RoundTripRecord]:
    """Translate forward translations back (tgt -> src) and score round trips.

    ``src_lang``/``tgt_lang`` name the *forward* direction; the backend call
    made here runs in the reverse direction.
    """
    if len(items) != len(fwd_translations):
        raise ValueError(
            f"length mismatch: {len(items)} items vs {len(fwd_translations)} translations"
        )
    if ids is None:
        ids = _auto_ids(len(items))
    back = translate_client.translate_batch(fwd_translations, src_lang=tgt_lang, tgt_lang=src_lang)
    return make_roundtrip_records(ids, items, fwd_translations, back, cosines=cosines)


def filter_roundtrip(
    records: Sequence[RoundTripRecord],
    mode: str = "data_mean",
    mu_bleu: float | None = None,
    mu_meteor: float | None = None,
    on_decision: Callable[[FilterDecision], None] | None = None,
) -> tuple[list[int], list[FilterDecision], RoundTripThresholds]:
    """Keep records whose BLEU and METEOR both reach their thresholds.

    ``data_mean`` derives each threshold as the arithmetic mean of that
    score over *all* input records before any record is judged; ``fixed``
    uses the supplied values. Comparisons are inclusive, so a record sitting
    exactly on both means is retained.
    """
    if not records:
        raise ValueError("round-trip filtering requires at least one record")
    if mode == "data_mean":
        mu_bleu = sum(r.bleu for r in records) / len(records)
        mu_meteor = sum(r.meteor for r in records) / len(records)
    elif mode == "fixed":
        if mu_bleu is None or mu_meteor is None:
            raise ValueError("fixed mode requires explicit mu_bleu and mu_meteor")
    else:
        raise ValueError(f"unknown round-trip filter mode {mode!r}")
    thresholds = RoundTripThresholds(mu_bleu=mu_bleu, mu_meteor=mu_meteor, mode=mode)
    retained = []
    decisions = []
    for index, record in enumerate(records):
        passed = record.bleu >= mu_bleu and record.meteor >= mu_meteor
        decision = FilterDecision(
            id=record.id,
            stage="roundtrip",
            scores={METRIC_BLEU: record.bleu, METRIC_METEOR: record.meteor},
            thresholds={METRIC_BLEU: mu_bleu, METRIC_METEOR: mu_meteor},
            passed=passed,
        )
        decisions.append(decision)
        if passed:
            retained.append(index)
        if on_decision is not None:
            on_decision(decision)
    return retained, decisions, thresholds


@dataclass(frozen=True)
class PipelineConfig:
    """Validated run settings; the merged view the CLI builds from
    ``pipeline.json``, command-line overrides and environment secrets."""

    task: str
    checkpoint_dir: str
    endpoints: dict
    dataset: str | None = None
    src_lang: str = "ita_Latn"
    tgt_lang: str = "lld_Latn"
    seed: int = 0
    audit_log: str | None = None
    q3_filter: bool = True
    length_cutoff: int | None = None
    exclude_choice_counts: tuple[int, ...] = (2, 6)
    rewrite: bool = False
    rewrite_instruction: str = DEFAULT_REWRITE_INSTRUCTION
    similarity_mode: str = "fixed"  # "fixed" | "reference"
    similarity_threshold: float = 0.68
    reference_corpus: str | None = None
    roundtrip_mode: str = "data_mean"  # "data_mean" | "fixed"
    mu_bleu: float | None = None
    mu_meteor: float | None = None

    def validate(self) -> None:
        if self.task not in ("sa", "mcqa"):
            raise ValueError(f"task must be 'sa' or 'mcqa', got {self.task!r}")
        if self.similarity_mode not in ("fixed", "reference"):
            raise ValueError(f"unknown similarity mode {self.similarity_mode!r}")
        if self.similarity_mode == "reference" and not self.reference_corpus:
            raise ValueError("similarity mode 'reference' needs a reference_corpus path")
        if self.roundtrip_mode not in ("data_mean", "fixed"):
            raise ValueError(f"unknown roundtrip mode {self.roundtrip_mode!r}")
        if self.roundtrip_mode == "fixed" and (self.mu_bleu is None or self.mu_meteor is None):
            raise ValueError("roundtrip mode 'fixed' needs mu_bleu and mu_meteor")
        for role, kind in (("translator", "translate"), ("embedder", "embed")):
            endpoint = self.endpoints.get(role)
            if endpoint is None:
                raise ValueError(f"pipeline requires a {role!r} endpoint")
            if endpoint.kind != kind:
                raise ValueError(f"endpoint {role!r} must have kind {kind!r}")
        if self.rewrite:
            chat = self.endpoints.get("chat")
            if chat is None or chat.kind != "chat":
                raise ValueError("rewrite stage requires a 'chat' endpoint")
            if not self.rewrite_instruction.strip():
                raise ValueError("rewrite stage requires a non-empty instruction")

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "PipelineConfig":
        """Build from a parsed ``pipeline.json``; relative paths resolve
        against ``base_dir`` (normally the config file's directory)."""
        base = Path(base_dir) if base_dir is not None else None

        def path_of(value):
            if value is None:
                return None
            p = Path(value)
            if base is not None and not p.is_absolute():
                p = base / p
            return str(p)

        endpoints = {}
        for role, spec in data.get("endpoints", {}).items():
            endpoints[role] = BackendEndpoint(name=spec.get("name", role), **{
                k: v for k, v in spec.items() if k != "name"
            })
        preprocess = data.get("preprocess", {})
        similarity = data.get("similarity", {})
        roundtrip = data.get("roundtrip", {})
        config = cls(
            task=data["task"],
            checkpoint_dir=path_of(data["checkpoint_dir"]),
            endpoints=endpoints,
            dataset=path_of(data.get("dataset")),
            src_lang=data.get("src_lang", "ita_Latn"),
            tgt_lang=data.get("tgt_lang", "lld_Latn"),
            seed=data.get("seed", 0),
            audit_log=path_of(data.get("audit_log")),
            q3_filter=preprocess.get("q3_filter", True),
            length_cutoff=preprocess.get("length_cutoff"),
            exclude_choice_counts=tuple(preprocess.get("exclude_choice_counts", (2, 6))),
            rewrite=preprocess.get("rewrite", False),
            rewrite_instruction=preprocess.get(
                "rewrite_instruction", DEFAULT_REWRITE_INSTRUCTION
            ),
            similarity_mode=similarity.get("mode", "fixed"),
            similarity_threshold=similarity.get("threshold", 0.68),
            reference_corpus=path_of(similarity.get("reference_corpus")),
            roundtrip_mode=roundtrip.get("mode", "data_mean"),
            mu_bleu=roundtrip.get("mu_bleu"),
            mu_meteor=roundtrip.get("mu_meteor"),
        )
        config.validate()
        return config

    def to_json_dict(self) -> dict:
        """Canonical snapshot embedded in reports and fingerprinted for
        checkpoint compatibility checks."""
        return {
            "task": self.task,
            "dataset": self.dataset,
            "checkpoint_dir": self.checkpoint_dir,
            "src_lang": self.src_lang,
            "tgt_lang": self.tgt_lang,
            "seed": self.seed,
            "audit_log": self.audit_log,
            "endpoints": {
                role: {
                    "name": e.name,
                    "base_url": e.base_url,
                    "kind": e.kind,
                    "timeout": e.timeout,
                    "max_retries": e.max_retries,
                    "batch_size": e.batch_size,
                    "max_in_flight": e.max_in_flight,
                }
                for role, e in sorted(self.endpoints.items())
            },
            "preprocess": {
                "q3_filter": self.q3_filter,
                "length_cutoff": self.length_cutoff,
                "exclude_choice_counts": list(self.exclude_choice_counts),
                "rewrite": self.rewrite,
                "rewrite_instruction": self.rewrite_instruction,
            },
            "similarity": {
                "mode": self.similarity_mode,
                "threshold": self.similarity_threshold,
                "reference_corpus": self.reference_corpus,
            },
            "roundtrip": {
                "mode": self.roundtrip_mode,
                "mu_bleu": self.mu_bleu,
                "mu_meteor": self.mu_meteor,
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PipelineReport:
    """Audit summary of one run: stage counts, thresholds, histograms,
    config snapshot and per-stage timings."""

    task: str
    stage_counts: dict
    thresholds: dict
    histograms: dict
    config: dict
    timings: dict
    metric_ids: dict = field(
        default_factory=lambda: {
            "similarity": METRIC_COSINE,
            "roundtrip_bleu": METRIC_BLEU,
            "roundtrip_meteor": METRIC_METEOR,
        }
    )

    def __post_init__(self):
        ordered = ["input", "after_preprocess", "after_filter1", "after_filter2"]
        values = [self.stage_counts[k] for k in ordered]
        if any(a < b for a, b in zip(values, values[1:])):
            raise ValueError(f"stage counts must be non-increasing, got {self.stage_counts}")

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "stage_counts": self.stage_counts,
            "thresholds": self.thresholds,
            "metric_ids": self.metric_ids,
            "histograms": self.histograms,
            "timings": self.timings,
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PipelineReport":
        return cls(
            task=data["task"],
            stage_counts=data["stage_counts"],
            thresholds=data["thresholds"],
            histograms=data["histograms"],
            config=data["config"],
            timings=data["timings"],
            metric_ids=data["metric_ids"],
        )


def _histogram(values: Sequence[float], lo: float, hi: float, bins: int = 20) -> dict:
    counts = [0] * bins
    width = (hi - lo) / bins
    for value in values:
        index = int((value - lo) / width)
        counts[min(max(index, 0), bins - 1)] += 1
    return {"lo": lo, "hi": hi, "bins": bins, "counts": counts}


class _DecisionWriter:
    """Streams decisions to ``<name>.partial`` and renames on commit, so a
    crashed stage leaves its partial progress on disk for inspection while
    the stage itself stays marked incomplete."""

    def __init__(self, path: Path):
        self.path = path
        self.partial = path.with_name(path.name + ".partial")
        self._handle = open(self.partial, "w", encoding="utf-8")

    def __call__(self, decision: FilterDecision) -> None:
        self._handle.write(json.dumps(decision.to_record(), ensure_ascii=False) + "\n")
        self._handle.flush()

    def commit(self) -> None:
        self._handle.close()
        self.partial.replace(self.path)

    def abandon(self) -> None:
        if not self._handle.closed:
            self._handle.close()


def _write_json(document: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)


def _entry_segments(entry) -> list[str]:
    if isinstance(entry, SAEntry):
        return [entry.text]
    return [entry.question, *entry.choices]


def _rebuild_entry(entry, segments: Sequence[str]):
    """Translated counterpart of ``entry`` with labels/answers untouched.

    Raises :class:`DatasetError` when the translated fields cannot form a
    valid entry (empty text, duplicated choices, ...); such entries are
    auto-failed at the similarity stage instead of aborting the run.
    """
    if isinstance(entry, SAEntry):
        return SAEntry(id=entry.id, text=segments[0], label=entry.label)
    return MCQAEntry(
        id=entry.id,
        question=segments[0],
        choices=tuple(segments[1:]),
        answer=entry.answer,
    )


class Pipeline:
    """Checkpointed execution of the five-stage procedure plus finalize.

    ``clients`` may inject pre-built :class:`BackendClient` objects per role
    ("translator", "embedder", "chat"); otherwise clients are built lazily
    from the config endpoints using ``transport_factory`` (defaults to HTTP).
    ``clock`` is injectable so tests can produce deterministic timings.
    """

    def __init__(
        self,
        config: PipelineConfig,
        clients: dict | None = None,
        transport_factory: Callable[[BackendEndpoint], object] | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ):
        config.validate()
        self.config = config
        self.dir = Path(config.checkpoint_dir)
        self.clock = clock
        self._clients = dict(clients or {})
        self._transport_factory = transport_factory
        self._audit: AuditLog | None = None
        self._state: dict = {}

    # -- files ---------------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.dir / name

    PREPROCESSED = "preprocessed.jsonl"
    FORWARD = "forward.jsonl"
    SIM_DECISIONS = "similarity_decisions.jsonl"
    ROUNDTRIP = "roundtrip.jsonl"
    RT_DECISIONS = "roundtrip_decisions.jsonl"
    OUT_SRC = "synthetic_src.jsonl"
    OUT_TGT = "synthetic_tgt.jsonl"
    OUT_PARALLEL = "synthetic_parallel.jsonl"
    REPORT = "report.json"
    STATE = "state.json"

    OUTPUT_FILES = (OUT_SRC, OUT_TGT, OUT_PARALLEL, REPORT)

    def client(self, role: str) -> BackendClient:
        if role not in self._clients:
            endpoint = self.config.endpoints[role]
            if self._audit is None and self.config.audit_log:
                self._audit = AuditLog(self.config.audit_log)
            transport = (
                self._transport_factory(endpoint)
                if self._transport_factory is not None
                else HttpTransport()
            )
            self._clients[role] = BackendClient(endpoint, transport=transport, audit_log=self._audit)
        return self._clients[role]

    def plan(self) -> list[str]:
        """The stages a run would execute, given the current checkpoints."""
        state = self._read_state()
        completed = set(state.get("completed", []))
        return [s for s in STAGES if s not in completed]

    # -- state ---------------------------------------------------------------

    def _read_state(self) -> dict:
        state_path = self.path(self.STATE)
        if not state_path.exists():
            return {
                "config_fingerprint": self.config.fingerprint(),
                "completed": [],
                "timings": {},
                "meta": {},
                "counts": {},
            }
        state = json.loads(state_path.read_text(encoding="utf-8"))
        if state.get("config_fingerprint") != self.config.fingerprint():
            raise ValueError(
                f"checkpoint directory {self.dir} belongs to a different configuration; "
                "use a fresh checkpoint_dir or delete the stale one"
            )
        return state

    def _save_state(self) -> None:
        _write_json(self._state, self.path(self.STATE))

    # -- orchestration ---------------------------------------------------------

    def run(self, dataset=None, until: str | None = None, resume: bool = True):
        """Execute all pending stages (optionally stopping after ``until``).

        Returns ``(synthetic_parallel_pairs, report)`` after a full run and
        ``None`` when stopped early. Already-completed stages are skipped
        when resuming; a failed stage raises :class:`PipelineStageError`
        and leaves every earlier checkpoint intact.
        """
        if until is not None and until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        self.dir.mkdir(parents=True, exist_ok=True)
        if not resume and self.path(self.STATE).exists():
            raise ValueError(
                f"checkpoint state already exists in {self.dir} and resume is disabled"
            )
        self._state = self._read_state()
        runners = {
            "preprocess": lambda: self._stage_preprocess(dataset),
            "translate": self._stage_translate,
            "filter_sim": self._stage_filter_sim,
            "backtranslate": self._stage_backtranslate,
            "filter_rt": self._stage_filter_rt,
            "finalize": self._stage_finalize,
        }
        for stage in STAGES:
            if stage not in self._state["completed"]:
                started = self.clock()
                try:
                    runners[stage]()
                except Exception as exc:
                    raise PipelineStageError(stage, exc) from exc
                self._state["timings"][stage] = self.clock() - started
                self._state["completed"].append(stage)
                self._save_state()
            if stage == until:
                return None
        return self.load_outputs()

    def load_outputs(self):
        pairs = corpus.load_dataset(self.path(self.OUT_PARALLEL), "parallel")
        report = PipelineReport.from_json_dict(
            json.loads(self.path(self.REPORT).read_text(encoding="utf-8"))
        )
        return pairs, report

    # -- stages ----------------------------------------------------------------

    def _stage_preprocess(self, dataset) -> None:
        config = self.config
        if dataset is None:
            if config.dataset is None:
                raise ValueError("no dataset given and no dataset path configured")
            dataset = corpus.load_dataset(config.dataset, config.task)
        self._state["counts"]["input"] = len(dataset)
        if config.task == "sa":
            if config.q3_filter:
                dataset, cutoff = corpus.q3_length_filter(dataset, cutoff=config.length_cutoff)
                self._state["meta"]["q3_cutoff"] = cutoff
        else:
            dataset = corpus.drop_choice_counts(dataset, set(config.exclude_choice_counts))
        if config.rewrite:
            dataset = self._rewrite(dataset)
        corpus.save_dataset(dataset, self.path(self.PREPROCESSED))
        self._state["counts"]["after_preprocess"] = len(dataset)

    def _rewrite(self, dataset):
        from .backends import llm_rewrite

        chat = self.client("chat")
        segments = [_entry_segments(e) for e in dataset]
        flat = [text for segs in segments for text in segs]
        rewritten = llm_rewrite(chat, flat, self.config.rewrite_instruction)
        rebuilt = []
        cursor = 0
        for entry, segs in zip(dataset, segments):
            chunk = rewritten[cursor : cursor + len(segs)]
            cursor += len(segs)
            rebuilt.append(_rebuild_entry(entry, chunk))
        return tuple(rebuilt)

    def _load_preprocessed(self):
        return corpus.load_dataset(self.path(self.PREPROCESSED), self.config.task)

    def _stage_translate(self) -> None:
        dataset = self._load_preprocessed()
        translator = self.client("translator")
        segments = [_entry_segments(e) for e in dataset]
        flat = [text for segs in segments for text in segs]
        translated = (
            translator.translate_batch(flat, self.config.src_lang, self.config.tgt_lang)
            if flat
            else []
        )
        records = []
        cursor = 0
        for entry, segs in zip(dataset, segments):
            chunk = translated[cursor : cursor + len(segs)]
            cursor += len(segs)
            records.append({"id": entry.id, "segments": chunk})
        corpus.write_jsonl(records, self.path(self.FORWARD))

    def _load_forward(self) -> list[dict]:
        return corpus.read_jsonl(self.path(self.FORWARD))

    def _stage_filter_sim(self) -> None:
        dataset = self._load_preprocessed()
        forward = self._load_forward()
        if [e.id for e in dataset] != [r["id"] for r in forward]:
            raise DatasetError("forward translations do not align with preprocessed entries")
        threshold = self._similarity_threshold()
        src_texts = [render_flat_text(e) for e in dataset]
        fwd_texts = []
        for entry, record in zip(dataset, forward):
            segs = record["segments"]
            rendered = "\n".join(segs)
            # Structurally unusable translations (blank segment, duplicate
            # choices, ...) are demoted to an empty rendering so the filter
            # auto-fails them instead of aborting the run.
            if any(not s.strip() for s in segs):
                rendered = ""
            else:
                try:
                    _rebuild_entry(entry, segs)
                except DatasetError:
                    rendered = ""
            fwd_texts.append(rendered)
        writer = _DecisionWriter(self.path(self.SIM_DECISIONS))
        try:
            retained, _ = filter_similarity(
                src_texts,
                fwd_texts,
                self.client("embedder"),
                threshold,
                ids=[e.id for e in dataset],
                on_decision=writer,
            )
        except Exception:
            writer.abandon()
            raise
        writer.commit()
        self._state["meta"]["similarity_threshold"] = threshold
        self._state["counts"]["after_filter1"] = len(retained)

    def _similarity_threshold(self) -> float:
        config = self.config
        if config.similarity_mode == "fixed":
            return config.similarity_threshold
        reference = corpus.load_dataset(config.reference_corpus, "parallel")
        return derive_similarity_threshold(reference, self.client("embedder"))

    def _load_sim_decisions(self) -> list[FilterDecision]:
        return [FilterDecision.from_record(r) for r in corpus.read_jsonl(self.path(self.SIM_DECISIONS))]

    def _stage_backtranslate(self) -> None:
        dataset = self._load_preprocessed()
        forward = {r["id"]: r["segments"] for r in self._load_forward()}
        decisions = {d.id: d for d in self._load_sim_decisions()}
        survivors = [e for e in dataset if decisions[e.id].passed]
        if not survivors:
            corpus.write_jsonl([], self.path(self.ROUNDTRIP))
            return
        translator = self.client("translator")
        segments = [forward[e.id] for e in survivors]
        flat = [text for segs in segments for text in segs]
        back_flat = translator.translate_batch(
            flat, src_lang=self.config.tgt_lang, tgt_lang=self.config.src_lang
        )
        back_rendered = []
        cursor = 0
        for segs in segments:
            chunk = back_flat[cursor : cursor + len(segs)]
            cursor += len(segs)
            back_rendered.append("\n".join(chunk))
        records = make_roundtrip_records(
            ids=[e.id for e in survivors],
            src_texts=[render_flat_text(e) for e in survivors],
            fwd_texts=["\n".join(forward[e.id]) for e in survivors],
            back_texts=back_rendered,
            cosines=[decisions[e.id].scores[METRIC_COSINE] for e in survivors],
        )
        corpus.write_jsonl((r.to_record() for r in records), self.path(self.ROUNDTRIP))

    def _load_roundtrip(self) -> list[RoundTripRecord]:
        return [RoundTripRecord.from_record(r) for r in corpus.read_jsonl(self.path(self.ROUNDTRIP))]

    def _stage_filter_rt(self) -> None:
        records = self._load_roundtrip()
        if not records:
            # Everything was dropped at the similarity stage; nothing to score.
            corpus.write_jsonl([], self.path(self.RT_DECISIONS))
            self._state["meta"]["mu_bleu"] = None
            self._state["meta"]["mu_meteor"] = None
            self._state["counts"]["after_filter2"] = 0
            return
        writer = _DecisionWriter(self.path(self.RT_DECISIONS))
        try:
            retained, _, thresholds = filter_roundtrip(
                records,
                mode=self.config.roundtrip_mode,
                mu_bleu=self.config.mu_bleu,
                mu_meteor=self.config.mu_meteor,
                on_decision=writer,
            )
        except Exception:
            writer.abandon()
            raise
        writer.commit()
        self._state["meta"]["mu_bleu"] = thresholds.mu_bleu
        self._state["meta"]["mu_meteor"] = thresholds.mu_meteor
        self._state["counts"]["after_filter2"] = len(retained)

    def _stage_finalize(self) -> None:
        dataset = self._load_preprocessed()
        forward = {r["id"]: r["segments"] for r in self._load_forward()}
        sim_decisions = self._load_sim_decisions()
        rt_decisions = [
            FilterDecision.from_record(r) for r in corpus.read_jsonl(self.path(self.RT_DECISIONS))
        ]
        passed_rt = {d.id for d in rt_decisions if d.passed}
        passed_sim = {d.id for d in sim_decisions if d.passed}
        final = [e for e in dataset if e.id in passed_sim and e.id in passed_rt]

        src_entries = tuple(final)
        tgt_entries = tuple(_rebuild_entry(e, forward[e.id]) for e in final)
        pairs = tuple(
            ParallelPair(
                id=e.id,
                src=render_flat_text(e),
                tgt="\n".join(forward[e.id]),
                src_lang=self.config.src_lang,
                tgt_lang=self.config.tgt_lang,
            )
            for e in final
        )
        corpus.save_dataset(src_entries, self.path(self.OUT_SRC))
        corpus.save_dataset(tgt_entries, self.path(self.OUT_TGT))
        corpus.save_dataset(pairs, self.path(self.OUT_PARALLEL))

        counts = self._state["counts"]
        meta = self._state["meta"]
        report = PipelineReport(
            task=self.config.task,
            stage_counts={
                "input": counts["input"],
                "after_preprocess": counts["after_preprocess"],
                "after_filter1": counts["after_filter1"],
                "after_filter2": counts["after_filter2"],
            },
            thresholds={
                "similarity_mode": self.config.similarity_mode,
                "similarity_threshold": meta.get("similarity_threshold"),
                "roundtrip_mode": self.config.roundtrip_mode,
                "mu_bleu": meta.get("mu_bleu"),
                "mu_meteor": meta.get("mu_meteor"),
                "q3_cutoff": meta.get("q3_cutoff"),
            },
            histograms={
                METRIC_COSINE: _histogram(
                    [d.scores[METRIC_COSINE] for d in sim_decisions], -1.0, 1.0
                ),
                METRIC_BLEU: _histogram(
                    [d.scores[METRIC_BLEU] for d in rt_decisions], 0.0, 100.0
                ),
                METRIC_METEOR: _histogram(
                    [d.scores[METRIC_METEOR] for d in rt_decisions], 0.0, 1.0
                ),
            },
            config=self.config.to_json_dict(),
            timings={s: self._state["timings"].get(s, 0.0) for s in STAGES[:-1]},
        )
        _write_json(report.to_json_dict(), self.path(self.REPORT))


def run_pipeline(
    config: PipelineConfig,
    dataset=None,
    clients: dict | None = None,
    transport_factory=None,
    clock: Callable[[], float] = time.perf_counter,
):
    """Run every pending stage; returns ``(synthetic_pairs, report)``."""
    pipeline = Pipeline(
        config, clients=clients, transport_factory=transport_factory, clock=clock
    )
    return pipeline.run(dataset=dataset)
