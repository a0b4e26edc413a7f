"""Streaming corpus pipeline: variant application, frequency tables, subsampling, splits, JSONL I/O."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence, TypeVar

from .grammars import (
    TERMINATOR,
    TREE_VARIANTS,
    VARIANTS,
    ConsistentGrammar,
    linearize,
    min_dl_local_order,
    reverse_transform,
    sort_freq_transform,
)
from .treebank import DEFAULT_PROMOTE, DepTree, EmptyTreeError, promote_function_heads, strip_punct

log = logging.getLogger(__name__)

META_KEY = "__meta__"


class ConfigurationError(ValueError):
    pass


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SentenceRecord:
    doc_id: str
    sent_idx: int
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words or self.words[-1] != TERMINATOR:
            raise RecordFormatError(f"{self.doc_id}/{self.sent_idx}: words must end with {TERMINATOR!r}")
        if any(w == "" for w in self.words):
            raise RecordFormatError(f"{self.doc_id}/{self.sent_idx}: empty word")

    @property
    def doc_initial(self) -> bool:
        return self.sent_idx == 0

    @property
    def n_words(self) -> int:
        """Word count without the terminator."""
        return len(self.words) - 1


@dataclass
class FreqTable:
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def get(self, word: str, default: int = 0) -> int:
        return self.counts.get(word, default)

    def merge(self, other: "FreqTable") -> "FreqTable":
        return FreqTable(self.counts + other.counts)

    def write(self, path, comment: str | None = None) -> None:
        items = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            if comment:
                f.write(f"# {comment}\n")
            for w, c in items:
                f.write(f"{w}\t{c}\n")

    @classmethod
    def read(cls, path) -> "FreqTable":
        counts: Counter = Counter()
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line or (line.startswith("#") and "\t" not in line):
                    continue
                word, sep, c = line.rpartition("\t")
                if not sep:
                    raise RecordFormatError(f"{path}:{line_no}: expected word<TAB>count")
                counts[word] = int(c)
        return cls(counts)


def build_freq_table(records: Iterable[SentenceRecord]) -> FreqTable:
    counts: Counter = Counter()
    for r in records:
        counts.update(r.words[:-1])
    return FreqTable(counts)


# ---------------------------------------------------------------------------
# variants


@dataclass(frozen=True)
class Variant:
    tag: str
    grammar: ConsistentGrammar | None = None
    freq: Mapping[str, int] | FreqTable | None = None

    def check(self) -> None:
        if self.tag not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.tag!r}; choose from {', '.join(VARIANTS)}")
        if self.tag in TREE_VARIANTS and self.tag != "Min-DL-Loc" and self.grammar is None:
            raise ConfigurationError(f"variant {self.tag} needs grammar weights")
        if self.tag in ("Sort-Freq", "Sort-Freq-Rev") and self.freq is None:
            raise ConfigurationError(f"variant {self.tag} needs a frequency table")


def normalize_word(form: str) -> str:
    return form.casefold()


def order_words(tree: DepTree, v: Variant, promote: Iterable[str] = DEFAULT_PROMOTE,
                promoted: DepTree | None = None) -> list[str]:
    """Word sequence of an already punctuation-stripped tree under variant ``v``, terminator appended.

    ``promoted`` may carry the function-head transform of ``tree`` when the
    caller has it already.
    """
    if v.tag in TREE_VARIANTS:
        t = promoted if promoted is not None else promote_function_heads(tree, promote)
        toks = min_dl_local_order(t) if v.tag == "Min-DL-Loc" else linearize(t, v.grammar)
        return [normalize_word(tok.form) for tok in toks] + [TERMINATOR]
    words = [normalize_word(tok.form) for tok in tree.tokens] + [TERMINATOR]
    if v.tag == "Reverse":
        return reverse_transform(words)
    if v.tag == "Sort-Freq":
        return sort_freq_transform(words, v.freq, "desc")
    if v.tag == "Sort-Freq-Rev":
        return sort_freq_transform(words, v.freq, "asc")
    return words


def prepare(tree: DepTree) -> DepTree | None:
    """Strip punctuation; None for sentences that were punctuation only."""
    try:
        return strip_punct(tree)
    except EmptyTreeError as e:
        log.warning("dropping sentence: %s", e)
        return None


def apply_variant(
    trees: Iterable[DepTree], v: Variant, promote: Iterable[str] = DEFAULT_PROMOTE
) -> Iterator[SentenceRecord]:
    v.check()  # fail before the stream is touched
    promote = frozenset(promote)

    def gen():
        for tree in trees:
            t = prepare(tree)
            if t is None:
                continue
            yield SentenceRecord(t.doc_id, t.sent_idx, tuple(order_words(t, v, promote)))

    return gen()


# ---------------------------------------------------------------------------
# documents, subsampling, splits

T = TypeVar("T")


def iter_documents(items: Iterable[T]) -> Iterator[list[T]]:
    """Group consecutive items (records or trees) sharing a doc_id."""
    for _, grp in groupby(items, key=lambda x: x.doc_id):
        yield list(grp)


def doc_words(doc: Sequence[SentenceRecord]) -> int:
    return sum(r.n_words for r in doc)


class WordBudget:
    """Admit whole documents until the running word count first reaches the budget."""

    def __init__(self, budget: int | None):
        if budget is not None and budget < 1:
            raise ValueError("word budget must be >= 1")
        self.budget = budget
        self.emitted = 0

    @property
    def full(self) -> bool:
        return self.budget is not None and self.emitted >= self.budget

    def admit(self, n_words: int) -> bool:
        if self.full:
            return False
        self.emitted += n_words
        return True


def subsample(
    docs: Iterable[Sequence[SentenceRecord]], word_budget: int, report: dict | None = None
) -> Iterator[Sequence[SentenceRecord]]:
    budget = WordBudget(word_budget)
    for doc in docs:
        if budget.full:
            break
        budget.admit(doc_words(doc))
        yield doc
    if not budget.full:
        log.warning("corpus exhausted at %d words, below budget %d", budget.emitted, word_budget)
    if report is not None:
        report["words"] = budget.emitted
        report["budget_reached"] = budget.full


SPLITS = ("train", "valid", "test")


def assign_split(doc_id: str, ratios: Sequence[float], seed: int) -> int:
    """Bucket a document by a seeded hash of its id; identical for every variant."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be positive and sum to 1: {ratios}")
    h = hashlib.blake2b(f"{seed}\x00{doc_id}".encode("utf-8"), digest_size=8).digest()
    u = int.from_bytes(h, "big") / 2.0**64
    acc = 0.0
    for i, r in enumerate(ratios):
        acc += r
        if u < acc:
            return i
    return len(ratios) - 1


def split(docs: Iterable[Sequence[SentenceRecord]], ratios: Sequence[float] = (0.9, 0.05, 0.05), seed: int = 0):
    parts: tuple[list, ...] = tuple([] for _ in ratios)
    for doc in docs:
        parts[assign_split(doc[0].doc_id, ratios, seed)].append(doc)
    return parts


# ---------------------------------------------------------------------------
# JSONL records


def record_to_json(r: SentenceRecord) -> str:
    return json.dumps(
        {"doc_id": r.doc_id, "sent_idx": r.sent_idx, "words": list(r.words)},
        ensure_ascii=False,
        separators=(",", ":"),
    )


def write_records(records: Iterable[SentenceRecord], dest, meta: dict | None = None) -> int:
    """Write JSON-lines; an optional first line carries ``{"__meta__": meta}``. Returns the count."""
    own = isinstance(dest, (str, Path))
    f: IO[str] = open(dest, "w", encoding="utf-8", newline="\n") if own else dest
    n = 0
    try:
        if meta is not None:
            f.write(json.dumps({META_KEY: meta}, sort_keys=True, separators=(",", ":")) + "\n")
        for r in records:
            f.write(record_to_json(r) + "\n")
            n += 1
    finally:
        if own:
            f.close()
    return n


def _parse_record(line: str, where: str) -> SentenceRecord | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordFormatError(f"{where}: invalid JSON ({e.msg})") from None
    if not isinstance(obj, dict):
        raise RecordFormatError(f"{where}: expected an object")
    if META_KEY in obj:
        return None
    try:
        doc_id, sent_idx, words = obj["doc_id"], obj["sent_idx"], obj["words"]
    except KeyError as e:
        raise RecordFormatError(f"{where}: missing field {e.args[0]}") from None
    if not isinstance(sent_idx, int) or sent_idx < 0 or not isinstance(words, list):
        raise RecordFormatError(f"{where}: bad sent_idx or words")
    try:
        return SentenceRecord(str(doc_id), sent_idx, tuple(words))
    except RecordFormatError as e:
        raise RecordFormatError(f"{where}: {e}") from None


def read_records(source) -> Iterator[SentenceRecord]:
    own = isinstance(source, (str, Path))
    f = open(source, encoding="utf-8") if own else source
    name = str(source) if own else getattr(source, "name", "<stream>")
    try:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = _parse_record(line, f"{name}:{line_no}")
            if rec is not None:
                yield rec
    finally:
        if own:
            f.close()


def read_meta(path) -> dict | None:
    with open(path, encoding="utf-8") as f:
        first = f.readline()
    if not first.strip():
        return None
    obj = json.loads(first)
    return obj.get(META_KEY) if isinstance(obj, dict) else None


class RecordFile:
    """Re-iterable view of a JSONL corpus file (each iteration re-reads the file)."""

    def __init__(self, path):
        self.path = Path(path)

    def __iter__(self) -> Iterator[SentenceRecord]:
        return read_records(self.path)
