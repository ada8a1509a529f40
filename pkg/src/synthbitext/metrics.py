"""Native implementations of all scoring functions used by the toolkit.

Everything here is pure Python over strings and numbers, so scores are
deterministic and reproducible across machines:

* ``sentence_bleu`` / ``corpus_bleu`` -- 4-gram precision BLEU on a 0..100
  scale. Sentence scoring applies exponential smoothing to zero n-gram
  counts (each zero-count order halves an extra smoothing factor); corpus
  scoring pools clipped counts and is unsmoothed. Orders longer than the
  hypothesis are skipped so that identical short strings still score 100.
  A hypothesis sharing no unigram with the reference scores 0.
* ``chrf_pp`` / ``corpus_chrf_pp`` -- F-beta (beta = 2) over precisions and
  recalls averaged across character n-grams of order 1..6 (whitespace
  removed) and word n-grams of order 1..2.
* ``rouge_l`` -- F1 of longest-common-subsequence precision/recall, 0..100.
* ``meteor`` -- exact-match METEOR (no stemming or synonym stage) with
  alpha = 0.9, beta = 3, gamma = 0.5, on a 0..1 scale.
* ``cosine_similarity`` -- over :class:`EmbeddingVector`.
* ``classification_metrics`` -- balanced accuracy (mean per-class recall)
  plus positive-class or macro F1.

Word tokenization splits punctuation from adjacent word characters in the
style of the WMT ``13a`` tokenizer and is case-sensitive throughout.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

log = logging.getLogger(__name__)

BLEU_ORDER = 4
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2.0
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

#: Identifiers under which the metrics appear in reports.
METRIC_BLEU = "bleu"
METRIC_CHRF = "chrf++"
METRIC_ROUGE = "rouge-l-f1"
METRIC_METEOR = "meteor-exact"
METRIC_COSINE = "cosine"


@dataclass(frozen=True)
class TokenSequence:
    """An ordered, immutable token list; tokens are never empty strings."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if any(not t for t in self.tokens):
            raise ValueError("token sequences must not contain empty tokens")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, index):
        return self.tokens[index]


# 13a-style punctuation handling: split ASCII punctuation from adjacent word
# characters, keep '.'/',' attached between digits and '-' attached unless it
# follows a digit.
_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_COMMA_BEFORE = re.compile(r"([^0-9])([\.,])")
_PERIOD_COMMA_AFTER = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH = re.compile(r"([0-9])(-)")
_WHITESPACE = re.compile(r"\s+")


def _word_tokens(text: str) -> list[str]:
    norm = f" {text} "
    norm = _PUNCT.sub(r" \1 ", norm)
    norm = _PERIOD_COMMA_BEFORE.sub(r"\1 \2 ", norm)
    norm = _PERIOD_COMMA_AFTER.sub(r" \1 \2", norm)
    norm = _DIGIT_DASH.sub(r"\1 \2 ", norm)
    return norm.split()


def _char_tokens(text: str) -> list[str]:
    return list(_WHITESPACE.sub("", text))


def tokenize(text: str, scheme: str = "word") -> TokenSequence:
    """Tokenize ``text``: 13a-style words, or characters with spaces removed."""
    if scheme == "word":
        return TokenSequence(tuple(_word_tokens(text)))
    if scheme == "char":
        return TokenSequence(tuple(_char_tokens(text)))
    raise ValueError(f"unknown tokenization scheme {scheme!r}")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_counts(
    hyp_tokens: Sequence[str], ref_tokens: Sequence[str]
) -> tuple[list[int], list[int]]:
    """Clipped match counts and totals for n-gram orders 1..BLEU_ORDER."""
    correct = [0] * BLEU_ORDER
    total = [0] * BLEU_ORDER
    for n in range(1, BLEU_ORDER + 1):
        hyp_ngrams = _ngram_counts(hyp_tokens, n)
        if not hyp_ngrams:
            continue
        ref_ngrams = _ngram_counts(ref_tokens, n)
        total[n - 1] = sum(hyp_ngrams.values())
        correct[n - 1] = sum(min(c, ref_ngrams.get(g, 0)) for g, c in hyp_ngrams.items())
    return correct, total


def _brevity_penalty(sys_len: int, ref_len: int) -> float:
    if sys_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / sys_len) if sys_len > 0 else 0.0


def _geometric_mean(precisions: Sequence[float]) -> float:
    return math.exp(sum(math.log(p) for p in precisions) / len(precisions))


def sentence_bleu(hyp: str, ref: str) -> float:
    """Smoothed sentence-level BLEU in [0, 100].

    ``100 * BP * exp(mean of log precisions)`` over 4-gram orders the
    hypothesis is long enough to have; a zero count at some order is
    replaced by ``1 / (2^k * total)`` where k counts the zero-count orders
    seen so far. No unigram match at all scores 0; an empty hypothesis
    scores 0 (logged).
    """
    ref_tokens = _word_tokens(ref)
    if not ref_tokens:
        raise ValueError("BLEU reference must be non-empty")
    hyp_tokens = _word_tokens(hyp)
    if not hyp_tokens:
        log.warning("BLEU hypothesis is empty; scoring 0 by convention")
        return 0.0
    correct, total = _bleu_counts(hyp_tokens, ref_tokens)
    if correct[0] == 0:
        return 0.0
    smooth = 1.0
    precisions = []
    for n in range(1, BLEU_ORDER + 1):
        if total[n - 1] == 0:
            continue
        if correct[n - 1] == 0:
            smooth *= 2.0
            precisions.append(1.0 / (smooth * total[n - 1]))
        else:
            precisions.append(correct[n - 1] / total[n - 1])
    bp = _brevity_penalty(len(hyp_tokens), len(ref_tokens))
    return 100.0 * bp * _geometric_mean(precisions)


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Corpus-level BLEU in [0, 100]: counts pooled over pairs, unsmoothed.

    A zero pooled match count at any available order yields 0. For a single
    pair with all positive precisions this equals :func:`sentence_bleu`.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("corpus BLEU requires at least one pair")
    correct = [0] * BLEU_ORDER
    total = [0] * BLEU_ORDER
    sys_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        ref_tokens = _word_tokens(ref)
        if not ref_tokens:
            raise ValueError("BLEU reference must be non-empty")
        hyp_tokens = _word_tokens(hyp)
        sys_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        if not hyp_tokens:
            continue
        pair_correct, pair_total = _bleu_counts(hyp_tokens, ref_tokens)
        for i in range(BLEU_ORDER):
            correct[i] += pair_correct[i]
            total[i] += pair_total[i]
    precisions = []
    for n in range(1, BLEU_ORDER + 1):
        if total[n - 1] == 0:
            continue
        if correct[n - 1] == 0:
            return 0.0
        precisions.append(correct[n - 1] / total[n - 1])
    if not precisions:
        return 0.0
    return 100.0 * _brevity_penalty(sys_len, ref_len) * _geometric_mean(precisions)


# chrF++ statistics are (hyp_count, ref_count, match_count) triples for char
# orders 1..6 followed by word orders 1..2.


def _chrf_stats(hyp: str, ref: str) -> list[tuple[int, int, int]]:
    stats = []
    hyp_chars = _char_tokens(hyp)
    ref_chars = _char_tokens(ref)
    for n in range(1, CHRF_CHAR_ORDER + 1):
        stats.append(_overlap(_ngram_counts(hyp_chars, n), _ngram_counts(ref_chars, n)))
    hyp_words = _word_tokens(hyp)
    ref_words = _word_tokens(ref)
    for n in range(1, CHRF_WORD_ORDER + 1):
        stats.append(_overlap(_ngram_counts(hyp_words, n), _ngram_counts(ref_words, n)))
    return stats


def _overlap(hyp_ngrams: Counter, ref_ngrams: Counter) -> tuple[int, int, int]:
    match = sum(min(c, ref_ngrams.get(g, 0)) for g, c in hyp_ngrams.items())
    return sum(hyp_ngrams.values()), sum(ref_ngrams.values()), match


def _chrf_from_stats(stats: Sequence[tuple[int, int, int]]) -> float:
    precisions = [m / h for h, _, m in stats if h > 0]
    recalls = [m / r for _, r, m in stats if r > 0]
    precision = sum(precisions) / len(precisions) if precisions else 0.0
    recall = sum(recalls) / len(recalls) if recalls else 0.0
    beta_sq = CHRF_BETA**2
    denom = beta_sq * precision + recall
    if denom == 0.0:
        return 0.0
    return 100.0 * (1.0 + beta_sq) * precision * recall / denom


def chrf_pp(hyp: str, ref: str) -> float:
    """chrF++ in [0, 100]; orders absent from a side are skipped from its average."""
    if not ref.strip():
        raise ValueError("chrF++ reference must be non-empty")
    if not hyp.strip():
        return 0.0
    return _chrf_from_stats(_chrf_stats(hyp, ref))


def corpus_chrf_pp(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Corpus chrF++ from n-gram statistics pooled over all pairs."""
    if len(hyps) != len(refs):
        raise ValueError(f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("corpus chrF++ requires at least one pair")
    pooled = [(0, 0, 0)] * (CHRF_CHAR_ORDER + CHRF_WORD_ORDER)
    for hyp, ref in zip(hyps, refs):
        if not ref.strip():
            raise ValueError("chrF++ reference must be non-empty")
        for i, stat in enumerate(_chrf_stats(hyp, ref)):
            pooled[i] = tuple(a + b for a, b in zip(pooled[i], stat))
    return _chrf_from_stats(pooled)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(hyp: str, ref: str) -> float:
    """ROUGE-L F1 over word tokens, in [0, 100]."""
    ref_tokens = _word_tokens(ref)
    if not ref_tokens:
        raise ValueError("ROUGE-L reference must be non-empty")
    hyp_tokens = _word_tokens(hyp)
    if not hyp_tokens:
        return 0.0
    lcs = _lcs_length(hyp_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp_tokens)
    recall = lcs / len(ref_tokens)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def meteor(hyp: str, ref: str) -> float:
    """Exact-match METEOR in [0, 1].

    Alignment pairs each hypothesis word with the first still-unmatched
    identical reference word, left to right. With matches m and contiguous
    aligned chunks ch the score is
    ``Fmean * (1 - gamma * (ch / m) ** beta)`` where
    ``Fmean = P*R / (alpha*P + (1-alpha)*R)``.
    """
    ref_tokens = _word_tokens(ref)
    if not ref_tokens:
        raise ValueError("METEOR reference must be non-empty")
    hyp_tokens = _word_tokens(hyp)
    if not hyp_tokens:
        return 0.0
    slots: dict[str, deque] = {}
    for j, token in enumerate(ref_tokens):
        slots.setdefault(token, deque()).append(j)
    pairs = []
    for i, token in enumerate(hyp_tokens):
        queue = slots.get(token)
        if queue:
            pairs.append((i, queue.popleft()))
    matches = len(pairs)
    if matches == 0:
        return 0.0
    chunks = 1
    for (pi, pj), (ci, cj) in zip(pairs, pairs[1:]):
        if not (ci == pi + 1 and cj == pj + 1):
            chunks += 1
    precision = matches / len(hyp_tokens)
    recall = matches / len(ref_tokens)
    one_minus_alpha = 1.0 - METEOR_ALPHA
    f_mean = (precision * recall) / (METEOR_ALPHA * precision + one_minus_alpha * recall)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension embedding; all components must be finite."""

    values: tuple[float, ...]
    dim: int = -1

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.dim == -1:
            object.__setattr__(self, "dim", len(self.values))
        if len(self.values) != self.dim:
            raise ValueError(f"vector has {len(self.values)} values but dim={self.dim}")
        if self.dim == 0:
            raise ValueError("embedding dimension must be positive")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, clamped to [-1, 1]."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dot_ab = 0.0
    dot_aa = 0.0
    dot_bb = 0.0
    for x, y in zip(a.values, b.values):
        dot_ab += x * y
        dot_aa += x * x
        dot_bb += y * y
    if dot_aa == 0.0 or dot_bb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    value = dot_ab / math.sqrt(dot_aa * dot_bb)
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class ClassificationScores:
    """Balanced accuracy, F1 and the per-class recalls behind them."""

    balanced_accuracy: float
    f1: float
    per_class_recall: dict = field(default_factory=dict)


def _f1_for_class(preds: Sequence, golds: Sequence, cls) -> float:
    tp = sum(1 for p, g in zip(preds, golds) if p == cls and g == cls)
    fp = sum(1 for p, g in zip(preds, golds) if p == cls and g != cls)
    fn = sum(1 for p, g in zip(preds, golds) if p != cls and g == cls)
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def classification_metrics(
    preds: Sequence, golds: Sequence, f1_mode: str = "binary_positive"
) -> ClassificationScores:
    """Balanced accuracy plus F1.

    Balanced accuracy averages recall over the classes present in ``golds``;
    predicted-only classes are excluded (with a warning). ``binary_positive``
    F1 scores label 0 (the positive sentiment label); ``macro`` averages
    per-class F1 over all labels seen in either list.
    """
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        raise ValueError("classification metrics require at least one item")
    if f1_mode not in ("binary_positive", "macro"):
        raise ValueError(f"unknown f1_mode {f1_mode!r}")
    gold_classes = sorted(set(golds))
    pred_only = sorted(set(preds) - set(golds))
    if pred_only:
        log.warning(
            "classes %s appear in predictions but not in golds; "
            "excluded from balanced accuracy",
            pred_only,
        )
    recalls = {}
    for cls in gold_classes:
        support = sum(1 for g in golds if g == cls)
        hits = sum(1 for p, g in zip(preds, golds) if g == cls and p == cls)
        recalls[cls] = hits / support
    balanced = sum(recalls.values()) / len(recalls)
    if f1_mode == "binary_positive":
        f1 = _f1_for_class(preds, golds, 0)
    else:
        classes = sorted(set(golds) | set(preds))
        f1 = sum(_f1_for_class(preds, golds, c) for c in classes) / len(classes)
    return ClassificationScores(balanced_accuracy=balanced, f1=f1, per_class_recall=recalls)
