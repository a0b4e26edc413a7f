import io
import json
from collections import Counter

import pytest
from scipy.stats import binom

from conftest import make_tree
from uidorder.corpus import (
    ConfigurationError,
    FreqTable,
    RecordFile,
    RecordFormatError,
    SentenceRecord,
    Variant,
    WordBudget,
    apply_variant,
    assign_split,
    build_freq_table,
    iter_documents,
    read_meta,
    read_records,
    split,
    subsample,
    write_records,
)
from uidorder.grammars import VARIANTS, load_grammar, make_random_grammar

DOG = make_tree([2, 3, 0, 3], labels=["det", "nsubj", "root", "punct"], forms=["The", "dog", "barked", "."])
FREQ = {"the": 100, "dog": 5, "barked": 2}


def words(v):
    (rec,) = list(apply_variant([DOG], v))
    return list(rec.words)


def doc(doc_id, n_words, n_sents=1):
    per = n_words // n_sents
    return [SentenceRecord(doc_id, i, tuple(["w"] * per + ["."])) for i in range(n_sents)]


class TestVariants:
    def test_real(self):
        assert words(Variant("Real")) == ["the", "dog", "barked", "."]

    def test_reverse(self):
        assert words(Variant("Reverse")) == ["barked", "dog", "the", "."]

    def test_sort_freq(self):
        assert words(Variant("Sort-Freq", freq=FREQ)) == ["the", "dog", "barked", "."]
        assert words(Variant("Sort-Freq-Rev", freq=FREQ)) == ["barked", "dog", "the", "."]

    def test_missing_resources_fail_before_streaming(self):
        def boom():
            raise AssertionError("stream was touched")
            yield

        for v in (Variant("Approx"), Variant("Sort-Freq"), Variant("Nope")):
            with pytest.raises(ConfigurationError):
                apply_variant(boom(), v)

    def test_punct_only_sentence_dropped(self):
        t = make_tree([0], labels=["punct"], forms=["!"])
        assert list(apply_variant([t, DOG], Variant("Real"))) == [
            SentenceRecord("d0", 0, ("the", "dog", "barked", "."))]

    def test_multisets_preserved_on_toy(self, toy_trees, weight_files):
        real = {(r.doc_id, r.sent_idx): Counter(r.words) for r in apply_variant(toy_trees, Variant("Real"))}
        freq = build_freq_table(apply_variant(toy_trees, Variant("Real"))).counts
        grammars = {t: load_grammar(p) for t, p in weight_files.items()}
        for tag in VARIANTS:
            g = grammars.get(tag) or (make_random_grammar(int(tag[6:])) if tag.startswith("Random") else None)
            if tag == "Min-DL-Opt":
                g = make_random_grammar(9)
            v = Variant(tag, grammar=g, freq=freq if tag.startswith("Sort") else None)
            got = {(r.doc_id, r.sent_idx): Counter(r.words) for r in apply_variant(toy_trees, v)}
            assert got == real, tag


class TestFreqTable:
    def test_counts(self):
        t = build_freq_table([SentenceRecord("d", 0, ("a", "b", "a", "."))])
        assert t.counts == {"a": 2, "b": 1} and t.total == 3

    def test_merge_is_concatenation(self):
        r1 = [SentenceRecord("d", 0, ("a", "b", "."))]
        r2 = [SentenceRecord("e", 0, ("b", "c", "."))]
        assert build_freq_table(r1).merge(build_freq_table(r2)).counts == build_freq_table(r1 + r2).counts

    def test_empty(self):
        assert build_freq_table([]).total == 0

    def test_write_read(self, tmp_path):
        t = FreqTable(Counter({"#tag": 3, "a b": 2, "x": 1}))
        t.write(tmp_path / "f.tsv", comment="hash")
        assert FreqTable.read(tmp_path / "f.tsv").counts == t.counts


class TestSubsample:
    def test_crossing_document_included(self):
        report = {}
        out = list(subsample([doc("a", 5), doc("b", 5), doc("c", 5)], 8, report))
        assert [d[0].doc_id for d in out] == ["a", "b"]
        assert report == {"words": 10, "budget_reached": True}

    def test_budget_exceeds_corpus(self, caplog):
        out = list(subsample([doc("a", 5), doc("b", 5)], 100))
        assert len(out) == 2
        assert "exhausted" in caplog.text

    def test_budget_one(self):
        assert [d[0].doc_id for d in subsample([doc("a", 5), doc("b", 5)], 1)] == ["a"]

    def test_invalid_budget(self):
        with pytest.raises(ValueError):
            WordBudget(0)

    def test_stops_reading_after_budget(self):
        def gen():
            yield doc("a", 5)
            yield doc("b", 5)
            raise AssertionError("read past the budget")

        assert len(list(subsample(gen(), 3))) == 1


class TestSplit:
    def test_same_partition_for_every_variant(self):
        ids = [f"doc{i}" for i in range(200)]
        a = [assign_split(d, (0.8, 0.1, 0.1), 3) for d in ids]
        b = [assign_split(d, (0.8, 0.1, 0.1), 3) for d in ids]
        assert a == b
        assert a != [assign_split(d, (0.8, 0.1, 0.1), 4) for d in ids]

    def test_counts_within_binomial_bounds(self):
        docs = [doc(f"doc{i}", 2) for i in range(1000)]
        parts = split(docs, (0.9, 0.05, 0.05), seed=0)
        assert sum(map(len, parts)) == 1000
        for part, p in zip(parts, (0.9, 0.05, 0.05)):
            lo, hi = binom.ppf(0.005, 1000, p), binom.ppf(0.995, 1000, p)
            assert lo <= len(part) <= hi

    def test_single_document(self):
        parts = split([doc("only", 3)], seed=1)
        assert sorted(map(len, parts)) == [0, 0, 1]

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            assign_split("x", (0.5, 0.6), 0)


class TestRecordIO:
    RECS = [SentenceRecord("d0", 0, ("a", "b", ".")), SentenceRecord("d0", 1, ("c", ".")),
            SentenceRecord("d1", 0, ("ü", "."))]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "r.jsonl"
        assert write_records(self.RECS, p, meta={"config_hash": "abc"}) == 3
        assert list(read_records(p)) == self.RECS
        assert read_meta(p) == {"config_hash": "abc"}
        rf = RecordFile(p)
        assert list(rf) == list(rf)

    def test_document_initial(self):
        (r,) = read_records(io.StringIO('{"doc_id":"d","sent_idx":0,"words":["a","."]}\n'))
        assert r.doc_initial and r.n_words == 1

    def test_missing_terminator_reports_line(self):
        src = io.StringIO('{"doc_id":"d","sent_idx":0,"words":["a","."]}\n{"doc_id":"d","sent_idx":1,"words":["a"]}\n')
        with pytest.raises(RecordFormatError, match=":2"):
            list(read_records(src))

    def test_invalid_json(self):
        with pytest.raises(RecordFormatError, match=":1"):
            list(read_records(io.StringIO("{oops\n")))

    def test_iter_documents(self):
        assert [len(d) for d in iter_documents(self.RECS)] == [2, 1]

    def test_compact_stable_serialization(self, tmp_path):
        p = tmp_path / "r.jsonl"
        write_records(self.RECS[:1], p)
        assert json.loads(p.read_text()) == {"doc_id": "d0", "sent_idx": 0, "words": ["a", "b", "."]}
