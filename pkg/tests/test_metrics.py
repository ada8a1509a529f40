from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthbitext.metrics import (
    ClassificationScores,
    EmbeddingVector,
    TokenSequence,
    chrf_pp,
    classification_metrics,
    corpus_bleu,
    corpus_chrf_pp,
    cosine_similarity,
    meteor,
    rouge_l,
    sentence_bleu,
    tokenize,
)

# -- tokenization --------------------------------------------------------------


def test_word_tokenize_splits_punctuation():
    assert tokenize("Ciao, mondo!").tokens == ("Ciao", ",", "mondo", "!")


def test_word_tokenize_keeps_decimal_numbers_together():
    assert tokenize("costa 1.50 euro").tokens == ("costa", "1.50", "euro")


def test_word_tokenize_keeps_word_internal_apostrophe_and_hyphen():
    assert tokenize("dell'hotel e-mail").tokens == ("dell'hotel", "e-mail")
    assert tokenize("2-3 giorni").tokens == ("2", "-", "3", "giorni")


def test_tokenize_empty():
    assert tokenize("").tokens == ()
    assert tokenize("   ").tokens == ()


def test_char_tokenize_drops_spaces():
    assert tokenize("abc", "char").tokens == ("a", "b", "c")
    assert tokenize("a b\tc", "char").tokens == ("a", "b", "c")


def test_token_sequence_rejects_empty_tokens():
    with pytest.raises(ValueError):
        TokenSequence(("a", ""))


def test_tokenize_unknown_scheme():
    with pytest.raises(ValueError):
        tokenize("x", "byte")


# -- BLEU -----------------------------------------------------------------------


def test_sentence_bleu_identity_is_exactly_100():
    assert sentence_bleu("il gatto dorme sul divano", "il gatto dorme sul divano") == 100.0


def test_sentence_bleu_disjoint_vocabulary_is_zero():
    assert sentence_bleu("aaa bbb", "ccc ddd eee") == 0.0


def test_sentence_bleu_brevity_penalty_case():
    # all precisions 1, hyp 4 tokens vs ref 5: 100 * exp(1 - 5/4)
    assert sentence_bleu("a b c d", "a b c d e") == pytest.approx(100.0 * math.exp(-0.25))


def test_sentence_bleu_empty_hypothesis_scores_zero():
    assert sentence_bleu("", "qualcosa") == 0.0


def test_sentence_bleu_empty_reference_raises():
    with pytest.raises(ValueError):
        sentence_bleu("x", "   ")


def test_sentence_bleu_exponential_smoothing():
    # hyp "a x": unigram 1/2; bigram count 1, zero matches -> 1/(2*1)
    expected = 100.0 * math.exp((math.log(0.5) + math.log(0.5)) / 2)
    assert sentence_bleu("a x", "a b") == pytest.approx(expected)


def test_sentence_bleu_short_identity_uses_available_orders():
    assert sentence_bleu("ciao", "ciao") == 100.0
    assert sentence_bleu("uno due", "uno due") == 100.0


def test_corpus_bleu_identity():
    texts = ["il gatto dorme", "una frase un po' più lunga di prima", "ok"]
    assert corpus_bleu(texts, texts) == 100.0


def test_corpus_bleu_length_mismatch():
    with pytest.raises(ValueError):
        corpus_bleu(["a"], ["a", "b"])


def test_corpus_bleu_rejects_empty_lists():
    with pytest.raises(ValueError):
        corpus_bleu([], [])


def test_corpus_bleu_single_pair_equals_sentence_bleu_when_unsmoothed():
    hyp = "il gatto dorme sul divano grande"
    ref = "il gatto dorme sul divano rosso grande"
    assert corpus_bleu([hyp], [ref]) == sentence_bleu(hyp, ref)


def test_corpus_bleu_zero_match_order_scores_zero():
    # unigrams overlap but no bigram does: unsmoothed corpus BLEU is 0
    assert corpus_bleu(["a c b"], ["a x b y c"]) == 0.0


def test_corpus_bleu_permutation_invariant():
    hyps = ["uno due tre quattro", "cinque sei sette", "otto nove dieci undici dodici"]
    refs = ["uno due tre quattro cinque", "cinque sei sette", "otto nove dieci"]
    before = corpus_bleu(hyps, refs)
    order = [2, 0, 1]
    after = corpus_bleu([hyps[i] for i in order], [refs[i] for i in order])
    assert before == after


# -- chrF++ ----------------------------------------------------------------------


def test_chrf_identity_is_exactly_100():
    assert chrf_pp("così è la vita", "così è la vita") == 100.0
    assert chrf_pp("ab", "ab") == 100.0


def test_chrf_disjoint_is_zero():
    assert chrf_pp("aaaa", "zzzz") == 0.0


def test_chrf_empty_hypothesis_scores_zero():
    assert chrf_pp("", "ref") == 0.0


def test_chrf_empty_reference_raises():
    with pytest.raises(ValueError):
        chrf_pp("x", " ")


def test_chrf_hand_statistics():
    # "abcd" vs "abce": char orders give P=R per order; word order 1 has
    # no match, word order 2 absent on both sides.
    hyp, ref = "abcd", "abce"
    char_p = [3 / 4, 2 / 3, 1 / 2, 0.0]  # orders 1..4; orders 5,6 absent
    word_p = [0.0]  # single word, no match; order 2 absent
    precisions = char_p + word_p
    p = sum(precisions) / len(precisions)
    r = p  # symmetric counts
    expected = 100.0 * 5.0 * p * r / (4.0 * p + r)
    assert chrf_pp(hyp, ref) == pytest.approx(expected)


def test_corpus_chrf_pools_statistics():
    hyps = ["abcd", "xyz"]
    refs = ["abce", "xyw"]
    pooled = corpus_chrf_pp(hyps, refs)
    means = (chrf_pp(hyps[0], refs[0]) + chrf_pp(hyps[1], refs[1])) / 2
    assert pooled != pytest.approx(means)  # pooling is not a sentence mean
    assert 0.0 <= pooled <= 100.0


# -- ROUGE-L ---------------------------------------------------------------------


def test_rouge_l_hand_case():
    assert rouge_l("a c", "a b c") == pytest.approx(80.0)


def test_rouge_l_identity_and_disjoint():
    assert rouge_l("la stessa frase", "la stessa frase") == 100.0
    assert rouge_l("aa bb", "cc dd") == 0.0


def test_rouge_l_empty_hypothesis():
    assert rouge_l("", "ref") == 0.0
    with pytest.raises(ValueError):
        rouge_l("x", "")


# -- METEOR ----------------------------------------------------------------------


def test_meteor_single_identical_word():
    assert meteor("parola", "parola") == 0.5


def test_meteor_ten_word_identity():
    text = " ".join(f"w{i}" for i in range(10))
    assert meteor(text, text) == pytest.approx(0.9995)


def test_meteor_identity_formula_exact():
    for m in (1, 2, 3, 7, 12):
        text = " ".join(f"tok{i}" for i in range(m))
        assert meteor(text, text) == 1.0 - 0.5 * (1.0 / m) ** 3


def test_meteor_no_overlap_is_zero():
    assert meteor("aa bb", "cc dd") == 0.0


def test_meteor_empty_cases():
    assert meteor("", "ref") == 0.0
    with pytest.raises(ValueError):
        meteor("x", "")


def test_meteor_chunk_penalty_orders_scores():
    # same matches, different chunking: contiguous alignment scores higher
    contiguous = meteor("a b c", "a b c x")
    scrambled = meteor("c a b", "a b c x")
    assert contiguous > scrambled > 0.0


# -- cosine ----------------------------------------------------------------------


def test_cosine_identity_exact():
    v = EmbeddingVector((0.3, -1.7, 2.9))
    assert cosine_similarity(v, v) == 1.0


def test_cosine_orthogonal_and_analytic():
    a = EmbeddingVector((1.0, 0.0))
    b = EmbeddingVector((0.0, 1.0))
    c = EmbeddingVector((1.0, 1.0))
    assert cosine_similarity(a, b) == 0.0
    assert cosine_similarity(c, a) == pytest.approx(1 / math.sqrt(2))


def test_cosine_errors():
    with pytest.raises(ValueError):
        cosine_similarity(EmbeddingVector((1.0,)), EmbeddingVector((1.0, 0.0)))
    with pytest.raises(ValueError):
        cosine_similarity(EmbeddingVector((0.0, 0.0)), EmbeddingVector((1.0, 0.0)))
    with pytest.raises(ValueError):
        EmbeddingVector((float("nan"),))
    with pytest.raises(ValueError):
        EmbeddingVector((1.0, 2.0), dim=3)


_component = st.floats(-100, 100).map(lambda x: 0.0 if abs(x) < 1e-3 else x)
_paired_vectors = st.lists(
    st.tuples(_component, _component), min_size=1, max_size=8
).filter(lambda pairs: any(x != 0 for x, _ in pairs) and any(y != 0 for _, y in pairs))


@settings(max_examples=100, deadline=None)
@given(_paired_vectors, st.floats(min_value=1e-3, max_value=1e3))
def test_cosine_scale_invariance(pairs, k):
    a = tuple(x for x, _ in pairs)
    b = tuple(y for _, y in pairs)
    va, vb = EmbeddingVector(a), EmbeddingVector(b)
    scaled = EmbeddingVector(tuple(k * x for x in a))
    assert cosine_similarity(scaled, vb) == pytest.approx(cosine_similarity(va, vb), abs=1e-12)


# -- classification ---------------------------------------------------------------


def test_classification_hand_confusion_matrix():
    scores = classification_metrics([0, 1, 1, 1], [0, 0, 1, 1], f1_mode="binary_positive")
    assert scores.balanced_accuracy == pytest.approx(0.75)
    assert scores.f1 == pytest.approx(2 / 3)
    assert scores.per_class_recall == {0: 0.5, 1: 1.0}


def test_classification_perfect_predictor():
    scores = classification_metrics([0, 1, 0], [0, 1, 0])
    assert scores.balanced_accuracy == 1.0
    assert scores.f1 == 1.0


def test_classification_constant_predictor_balanced_golds():
    scores = classification_metrics([0, 0, 0, 0], [0, 0, 1, 1])
    assert scores.balanced_accuracy == 0.5


def test_classification_macro_mode():
    # preds [0,2,1,1] vs golds [0,1,1,2]: per-class F1 = 1, 0.5, 0
    scores = classification_metrics([0, 2, 1, 1], [0, 1, 1, 2], f1_mode="macro")
    assert scores.f1 == pytest.approx((1.0 + 0.5 + 0.0) / 3)


def test_classification_pred_only_class_warns_and_is_excluded(caplog):
    import logging

    with caplog.at_level(logging.WARNING):
        scores = classification_metrics([0, 5], [0, 0])
    assert scores.balanced_accuracy == 0.5  # class 0 recall only
    assert 5 not in scores.per_class_recall
    assert any("excluded" in r.message for r in caplog.records)


def test_classification_length_mismatch():
    with pytest.raises(ValueError):
        classification_metrics([0], [0, 1])


def test_balanced_accuracy_equals_accuracy_on_balanced_golds():
    rng = random.Random(7)
    golds = [0] * 50 + [1] * 50
    preds = [rng.randint(0, 1) for _ in golds]
    scores = classification_metrics(preds, golds)
    plain_accuracy = sum(p == g for p, g in zip(preds, golds)) / len(golds)
    assert scores.balanced_accuracy == pytest.approx(plain_accuracy)


def test_classification_permutation_invariance():
    preds = [0, 1, 1, 0, 1]
    golds = [0, 0, 1, 1, 1]
    order = [4, 2, 0, 3, 1]
    a = classification_metrics(preds, golds)
    b = classification_metrics([preds[i] for i in order], [golds[i] for i in order])
    assert a == b


# -- fuzz / property suite ----------------------------------------------------------

_text = st.text(min_size=1).filter(lambda s: bool(s.strip()))


@settings(max_examples=150, deadline=None)
@given(_text)
def test_identity_maxima_property(x):
    assert sentence_bleu(x, x) == 100.0
    assert chrf_pp(x, x) == 100.0
    assert rouge_l(x, x) == 100.0
    m = len(tokenize(x).tokens)
    assert meteor(x, x) == 1.0 - 0.5 * (1.0 / m) ** 3


@settings(max_examples=150, deadline=None)
@given(st.text(), _text)
def test_metric_ranges_on_arbitrary_utf8(hyp, ref):
    assert 0.0 <= sentence_bleu(hyp, ref) <= 100.0
    assert 0.0 <= chrf_pp(hyp, ref) <= 100.0
    assert 0.0 <= rouge_l(hyp, ref) <= 100.0
    assert 0.0 <= meteor(hyp, ref) <= 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.text(), _text), min_size=1, max_size=8), st.randoms())
def test_corpus_bleu_permutation_property(pairs, rnd):
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert corpus_bleu(hyps, refs) == corpus_bleu(
        [hyps[i] for i in order], [refs[i] for i in order]
    )
