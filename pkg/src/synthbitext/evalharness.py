"""Scoring harness for translation systems and downstream task predictions.

Translation quality is reported per test subset and as the unweighted mean
across subsets (the "macro" row of the usual system-comparison tables):

* ``bleu`` -- corpus BLEU (pooled counts),
* ``chrf++`` -- corpus chrF++ (pooled n-gram statistics),
* ``rouge-l-f1`` -- mean of per-sentence ROUGE-L F1 (sentence-mean is the
  common convention for ROUGE; the variant is recorded in report metadata
  so the choice stays auditable).

The harness also scores SA/MCQA predictions (balanced accuracy plus F1),
compares a synthetic corpus against a gold human translation by mean
embedding cosine, and computes tokenizer fertility (tokens per word).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import corpus
from .backends import BackendClient
from .corpus import ParallelPair
from .metrics import (
    METRIC_BLEU,
    METRIC_CHRF,
    METRIC_ROUGE,
    ClassificationScores,
    classification_metrics,
    corpus_bleu,
    corpus_chrf_pp,
    cosine_similarity,
    rouge_l,
)

MT_METRICS = (METRIC_BLEU, METRIC_CHRF, METRIC_ROUGE)


@dataclass(frozen=True)
class EvalSuite:
    """Named, non-empty test subsets sharing one translation direction."""

    subsets: dict
    direction: tuple[str, str]

    def __post_init__(self):
        if not self.subsets:
            raise ValueError("evaluation suite needs at least one subset")
        for name, pairs in self.subsets.items():
            if not pairs:
                raise ValueError(f"subset {name!r} is empty")


@dataclass(frozen=True)
class EvalReport:
    """Per-subset metric table plus the unweighted across-subset means."""

    per_subset: dict
    macro: dict
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "per_subset": self.per_subset,
            "macro": self.macro,
            "metadata": self.metadata,
        }


def macro_scores(per_subset: Mapping[str, Mapping[str, float]]) -> dict:
    """Unweighted mean of every metric across subsets.

    All subsets must report the same metric set; this is the aggregation
    that turns per-subset rows into the headline system score.
    """
    if not per_subset:
        raise ValueError("macro aggregation needs at least one subset")
    subsets = list(per_subset.values())
    metrics = list(subsets[0])
    for name, cells in per_subset.items():
        if list(cells) != metrics:
            raise ValueError(f"subset {name!r} reports a different metric set")
    return {m: sum(cells[m] for cells in subsets) / len(subsets) for m in metrics}


def evaluate_mt(
    suite: EvalSuite,
    system_outputs: Mapping[str, Sequence[str]],
    system: str = "system",
) -> EvalReport:
    """Score hypothesis translations against each subset's target side."""
    per_subset = {}
    for name, pairs in suite.subsets.items():
        if name not in system_outputs:
            raise ValueError(f"no system outputs for subset {name!r}")
        hyps = list(system_outputs[name])
        refs = [p.tgt for p in pairs]
        if len(hyps) != len(refs):
            raise ValueError(
                f"subset {name!r}: {len(hyps)} hypotheses for {len(refs)} references"
            )
        per_subset[name] = {
            METRIC_BLEU: corpus_bleu(hyps, refs),
            METRIC_CHRF: corpus_chrf_pp(hyps, refs),
            METRIC_ROUGE: sum(rouge_l(h, r) for h, r in zip(hyps, refs)) / len(refs),
        }
    return EvalReport(
        per_subset=per_subset,
        macro=macro_scores(per_subset),
        metadata={
            "system": system,
            "direction": f"{suite.direction[0]}->{suite.direction[1]}",
            "rouge_variant": METRIC_ROUGE,
        },
    )


def render_report_table(report: EvalReport) -> str:
    """Aligned plain-text table: one row per metric, one column per subset
    plus the macro column."""
    subsets = list(report.per_subset)
    metrics = list(next(iter(report.per_subset.values())))
    header = ["metric", *subsets, "macro"]
    rows = [header]
    for metric in metrics:
        cells = [f"{report.per_subset[s][metric]:.2f}" for s in subsets]
        rows.append([metric, *cells, f"{report.macro[metric]:.2f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append(
            "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
        )
    return "\n".join(lines)


def evaluate_task(preds: Sequence[int], golds: Sequence[int], task: str) -> ClassificationScores:
    """Balanced accuracy plus F1 for SA (positive-class) or MCQA (macro)."""
    if task == "sa":
        return classification_metrics(preds, golds, f1_mode="binary_positive")
    if task == "mcqa":
        return classification_metrics(preds, golds, f1_mode="macro")
    raise ValueError(f"unknown task {task!r}")


def compare_to_gold(
    synthetic: Sequence[ParallelPair],
    gold: Sequence[ParallelPair],
    embed_client: BackendClient,
) -> float:
    """100 x mean embedding cosine between aligned synthetic and gold targets.

    Corpora must contain exactly the same ids; pairs are matched by id, in
    the synthetic corpus's order.
    """
    synthetic_by_id = {p.id: p for p in synthetic}
    gold_by_id = {p.id: p for p in gold}
    only_synthetic = sorted(set(synthetic_by_id) - set(gold_by_id))
    only_gold = sorted(set(gold_by_id) - set(synthetic_by_id))
    if only_synthetic or only_gold:
        raise ValueError(
            f"corpora are not id-aligned; only in synthetic: {only_synthetic}, "
            f"only in gold: {only_gold}"
        )
    if not synthetic:
        raise ValueError("cannot compare empty corpora")
    ordered_gold = [gold_by_id[p.id] for p in synthetic]
    texts = [p.tgt for p in synthetic] + [p.tgt for p in ordered_gold]
    vectors = embed_client.embed_batch(texts)
    n = len(synthetic)
    cosines = [cosine_similarity(vectors[i], vectors[n + i]) for i in range(n)]
    return 100.0 * sum(cosines) / n


def tokenizer_fertility(texts: Sequence[str], token_counts: Sequence[int]) -> float:
    """Total subword tokens divided by total whitespace words.

    ``token_counts[i]`` is the number of tokens some external tokenizer
    produced for ``texts[i]``; a ratio near 1 means the vocabulary fits the
    language well.
    """
    if len(texts) != len(token_counts):
        raise ValueError(
            f"length mismatch: {len(texts)} texts vs {len(token_counts)} token counts"
        )
    if not texts:
        raise ValueError("fertility needs at least one text")
    if any(t < 0 for t in token_counts):
        raise ValueError("token counts must be non-negative")
    total_words = sum(corpus.word_count(t) for t in texts)
    if total_words == 0:
        raise ValueError("fertility undefined for zero total words")
    return sum(token_counts) / total_words


def load_suite_manifest(path: str | Path) -> EvalSuite:
    """Read a suite manifest: ``{"subsets": {"t1": "path.jsonl", ...},
    "direction": ["ita_Latn", "lld_Latn"]}``; subset paths are parallel
    JSONL datasets, resolved relative to the manifest."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    direction = tuple(manifest["direction"])
    if len(direction) != 2:
        raise ValueError("direction must be [src_lang, tgt_lang]")
    subsets = {}
    for name, rel in manifest["subsets"].items():
        subset_path = Path(rel)
        if not subset_path.is_absolute():
            subset_path = path.parent / subset_path
        subsets[name] = corpus.load_dataset(subset_path, "parallel")
    return EvalSuite(subsets=subsets, direction=direction)  # type: ignore[arg-type]


def load_hypotheses(path: str | Path) -> list[str]:
    """One hypothesis sentence per line, aligned with the subset's sources."""
    with open(path, encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle]
