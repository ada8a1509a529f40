from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthbitext import corpus
from synthbitext.corpus import (
    CorpusStats,
    DatasetError,
    MCQAEntry,
    ParallelPair,
    SAEntry,
    compute_corpus_stats,
    drop_choice_counts,
    load_dataset,
    q3_length_filter,
    save_dataset,
)

from conftest import make_mcqa_dataset, make_sa_dataset


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- loading -----------------------------------------------------------------


def test_load_sa_keeps_order_and_assigns_ids(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(
        path,
        [
            json.dumps({"text": "great stay", "label": 0}),
            json.dumps({"text": "awful breakfast", "label": 1}),
        ],
    )
    dataset = load_dataset(path, "sa")
    assert [e.text for e in dataset] == ["great stay", "awful breakfast"]
    assert [e.id for e in dataset] == ["000001", "000002"]


def test_load_rejects_bad_label(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(path, [json.dumps({"text": "ok", "label": 0}), json.dumps({"text": "x", "label": 2})])
    with pytest.raises(DatasetError) as err:
        load_dataset(path, "sa")
    assert err.value.line == 2


def test_load_rejects_answer_out_of_range(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, [json.dumps({"question": "q", "choices": ["a", "b", "c"], "answer": 3})])
    with pytest.raises(DatasetError) as err:
        load_dataset(path, "mcqa")
    assert err.value.line == 1


def test_load_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(
        path,
        [
            json.dumps({"id": "a", "text": "x", "label": 0}),
            json.dumps({"id": "a", "text": "y", "label": 1}),
        ],
    )
    with pytest.raises(DatasetError, match="duplicate id"):
        load_dataset(path, "sa")


def test_load_rejects_schema_mismatch(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(path, [json.dumps({"question": "q", "choices": ["a", "b"], "answer": 0})])
    with pytest.raises(DatasetError, match="kind 'sa'"):
        load_dataset(path, "sa")


def test_load_rejects_invalid_json_with_line_number(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(path, [json.dumps({"text": "ok", "label": 0}), "{not json"])
    with pytest.raises(DatasetError) as err:
        load_dataset(path, "sa")
    assert err.value.line == 2


def test_load_rejects_boolean_label(tmp_path):
    path = tmp_path / "sa.jsonl"
    write_lines(path, [json.dumps({"text": "ok", "label": True})])
    with pytest.raises(DatasetError):
        load_dataset(path, "sa")


def test_entry_invariants():
    with pytest.raises(DatasetError):
        SAEntry(id="x", text="   ", label=0)
    with pytest.raises(DatasetError):
        MCQAEntry(id="x", question="q", choices=("a", "a", "b"), answer=0)
    with pytest.raises(DatasetError):
        ParallelPair(id="x", src="a", tgt="b", src_lang="ita_Latn", tgt_lang="ita_Latn")


# -- saving ------------------------------------------------------------------


def test_save_load_round_trip_is_byte_stable(tmp_path):
    dataset = (
        SAEntry(id="1", text="Grande hotel, però caro!", label=0),
        SAEntry(id="2", text="mai più", label=1),
    )
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    save_dataset(dataset, first)
    reloaded = load_dataset(first, "sa")
    assert reloaded == dataset
    save_dataset(reloaded, second)
    assert first.read_bytes() == second.read_bytes()


def test_save_empty_dataset_round_trips(tmp_path):
    path = tmp_path / "empty.jsonl"
    save_dataset((), path)
    assert load_dataset(path, "mcqa") == ()


def test_save_requires_parent_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        save_dataset((), tmp_path / "nope" / "x.jsonl")


def _random_dataset(rng: random.Random, kind: str):
    n = rng.randint(1, 40)
    if kind == "sa":
        return tuple(
            SAEntry(
                id=f"e{i}",
                text=" ".join(rng.choice("abcdefg") for _ in range(rng.randint(1, 12))),
                label=rng.randint(0, 1),
            )
            for i in range(n)
        )
    if kind == "mcqa":
        entries = []
        for i in range(n):
            k = rng.randint(2, 6)
            choices = tuple(f"c{i}_{j}_{rng.randint(0, 9)}" for j in range(k))
            entries.append(
                MCQAEntry(id=f"e{i}", question=f"q{i}?", choices=choices, answer=rng.randrange(k))
            )
        return tuple(entries)
    return tuple(
        ParallelPair(
            id=f"e{i}",
            src=f"src {i} ü",
            tgt=f"tgt {i} ë",
            src_lang="ita_Latn",
            tgt_lang="lld_Latn",
        )
        for i in range(n)
    )


@pytest.mark.parametrize("kind", corpus.KINDS)
def test_random_datasets_round_trip(tmp_path, kind):
    rng = random.Random(1234)
    for trial in range(25):
        dataset = _random_dataset(rng, kind)
        path = tmp_path / f"{kind}_{trial}.jsonl"
        save_dataset(dataset, path)
        assert load_dataset(path, kind) == dataset


# -- statistics ---------------------------------------------------------------


def test_avg_words_hand_computed():
    dataset = (
        SAEntry(id="1", text="uno due tre quattro", label=0),
        SAEntry(id="2", text="a b c d e f", label=1),
    )
    stats = compute_corpus_stats(dataset)
    assert stats.avg_words_per_entry == 5.0
    assert stats.label_counts == {0: 1, 1: 1}


def test_single_entry_stats_equal_entry_counts():
    entry = SAEntry(id="1", text="ab cde", label=1)
    stats = compute_corpus_stats((entry,))
    assert stats.avg_words_per_entry == 2
    assert stats.avg_chars_per_entry == len("ab cde")
    assert stats.entry_count == 1


def test_stats_counts_sum_to_entry_count():
    dataset = make_mcqa_dataset(17)
    stats = compute_corpus_stats(dataset)
    assert sum(stats.choice_count_freq.values()) == stats.entry_count == 17


def test_mcqa_stats_split_question_and_choices():
    entry = MCQAEntry(id="1", question="one two three", choices=("a b", "c"), answer=0)
    stats = compute_corpus_stats((entry,))
    assert stats.avg_words_per_question == 3
    assert stats.avg_words_per_choices == 3
    assert stats.avg_chars_per_question == len("one two three")
    assert stats.avg_chars_per_choices == len("a b") + len("c")


def test_parallel_stats_report_both_sides():
    pair = ParallelPair(id="1", src="a b c", tgt="xx yy", src_lang="s", tgt_lang="t")
    stats = compute_corpus_stats((pair,))
    assert stats.src_avg_words == 3
    assert stats.tgt_avg_words == 2
    assert stats.tgt_avg_chars == 5


def test_stats_json_shapes():
    sa = compute_corpus_stats(make_sa_dataset(4)).to_json_dict()
    assert set(sa) == {
        "kind",
        "entry_count",
        "avg_words_per_entry",
        "avg_chars_per_entry",
        "positive_label_count",
        "negative_label_count",
    }
    mcqa = compute_corpus_stats(make_mcqa_dataset(4)).to_json_dict()
    assert "avg_words_per_question" in mcqa and "choice_count_freq" in mcqa


def test_stats_reject_empty_dataset():
    with pytest.raises(DatasetError):
        compute_corpus_stats(())


def test_stats_invariant_enforced():
    with pytest.raises(DatasetError):
        CorpusStats(
            kind="sa",
            entry_count=3,
            avg_words_per_entry=1.0,
            avg_chars_per_entry=1.0,
            label_counts={0: 1, 1: 1},
        )


# -- preprocessing ------------------------------------------------------------


def _sa_with_word_counts(counts):
    return tuple(
        SAEntry(id=f"e{i}", text=" ".join(f"t{i}w{j}" for j in range(c)), label=0)
        for i, c in enumerate(counts)
    )


def test_q3_nearest_rank_on_one_to_eight():
    dataset = _sa_with_word_counts(range(1, 9))
    retained, cutoff = q3_length_filter(dataset)
    assert cutoff == 6
    assert len(retained) == 6
    assert retained == dataset[:6]


def test_q3_reapplying_with_returned_cutoff_is_identity():
    dataset = _sa_with_word_counts([3, 9, 1, 7, 5, 2, 8, 4])
    retained, cutoff = q3_length_filter(dataset)
    again, cutoff2 = q3_length_filter(retained, cutoff=cutoff)
    assert again == retained
    assert cutoff2 == cutoff


def test_q3_degenerate_all_equal_lengths_keeps_all():
    dataset = _sa_with_word_counts([4] * 10)
    retained, cutoff = q3_length_filter(dataset)
    assert retained == dataset
    assert cutoff == 4


def test_q3_preserves_order_and_entries():
    dataset = _sa_with_word_counts([5, 1, 9, 2, 9, 3, 9, 4])
    retained, cutoff = q3_length_filter(dataset)
    assert list(retained) == [e for e in dataset if len(e.text.split()) <= cutoff]


def test_q3_rejects_empty():
    with pytest.raises(DatasetError):
        q3_length_filter(())


def test_drop_choice_counts_default():
    dataset = make_mcqa_dataset(5, choice_counts=(2, 3, 4, 5, 6))
    retained = drop_choice_counts(dataset)
    assert [len(e.choices) for e in retained] == [3, 4, 5]
    assert retained == tuple(e for e in dataset if len(e.choices) in (3, 4, 5))


def test_drop_choice_counts_empty_exclusion_is_identity():
    dataset = make_mcqa_dataset(7, choice_counts=(2, 3, 6))
    assert drop_choice_counts(dataset, set()) == dataset


def test_drop_choice_counts_idempotent():
    dataset = make_mcqa_dataset(9, choice_counts=(2, 3, 4, 5, 6))
    once = drop_choice_counts(dataset)
    assert drop_choice_counts(once) == once


# -- property tests -----------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=60), min_size=1, max_size=60))
def test_q3_retains_at_least_three_quarters(counts):
    dataset = _sa_with_word_counts(counts)
    retained, cutoff = q3_length_filter(dataset)
    # nearest-rank: at least ceil(0.75 n) entries fall at or below the cutoff
    import math

    assert len(retained) >= math.ceil(0.75 * len(counts))
    assert all(len(e.text.split()) <= cutoff for e in retained)
    # explicit-cutoff re-application changes nothing
    assert q3_length_filter(retained, cutoff=cutoff)[0] == retained


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.text(min_size=1).filter(str.strip), st.integers(0, 1)),
        min_size=1,
        max_size=30,
    )
)
def test_sa_record_serialization_property(items):
    dataset = tuple(
        SAEntry(id=f"e{i}", text=text, label=label) for i, (text, label) in enumerate(items)
    )
    for entry in dataset:
        line = json.dumps(corpus.entry_to_record(entry), ensure_ascii=False)
        assert corpus.record_to_entry(json.loads(line), "sa") == entry
