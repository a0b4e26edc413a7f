"""Per-word surprisal: a count-based n-gram LM, external surprisal import, and an exact finite-language oracle."""

from __future__ import annotations

import gzip
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .corpus import SentenceRecord, iter_documents

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SMOOTHING = ("mle", "add-alpha", "kn")

MODEL_MAGIC = b"UIDNGRAM"
MODEL_VERSION = 1


class InfiniteSurprisalError(ArithmeticError):
    pass


class DocumentOrderError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# n-gram model


class NGramModel:
    """n-gram LM over words plus EOS, with document-level context.

    ``tables[k]`` maps a length-``k`` context to next-event counts. The
    top order holds raw counts; for ``kn`` smoothing the lower orders hold
    continuation counts (number of distinct left extensions).
    """

    def __init__(self, n: int, smoothing: str = "kn", alpha: float = 1.0, discount: float = 0.75,
                 unk_threshold: int = 2):
        if n < 1:
            raise ValueError("n-gram order must be >= 1")
        if smoothing not in SMOOTHING:
            raise ValueError(f"smoothing must be one of {SMOOTHING}")
        if smoothing == "kn" and not 0.0 < discount <= 1.0:
            raise ValueError("Kneser-Ney discount must lie in (0, 1]")
        if smoothing == "add-alpha" and alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.n = n
        self.smoothing = smoothing
        self.alpha = alpha
        self.discount = discount
        self.unk_threshold = unk_threshold
        self.vocab: frozenset[str] = frozenset({UNK, EOS})
        self.tables: list[dict[tuple, Counter]] = [dict() for _ in range(n)]
        self._totals: list[dict[tuple, tuple[int, int]]] = []
        self.meta: dict = {}

    # -- vocabulary and event streams

    @property
    def events(self) -> list[str]:
        """Sorted outcome space: vocabulary words, UNK and EOS."""
        return sorted(self.vocab)

    def map_word(self, w: str) -> str:
        return w if w in self.vocab else UNK

    def _stream(self, sentences: Iterable[Sequence[str]]) -> Iterator[tuple[tuple, str, int]]:
        """Yield (context, event, sentence position) across one document; position -1 is EOS."""
        hist = [BOS] * (self.n - 1)
        k = self.n - 1
        for sent in sentences:
            for pos, w in enumerate(sent):
                y = self.map_word(w)
                yield (tuple(hist[len(hist) - k:]) if k else (), y, pos)
                hist.append(y)
            yield (tuple(hist[len(hist) - k:]) if k else (), EOS, -1)
            hist.append(EOS)
            if len(hist) > 4 * self.n:
                del hist[: len(hist) - k]

    # -- training

    def fit(self, documents: Callable[[], Iterable[Sequence[Sequence[str]]]]) -> "NGramModel":
        """Train from a zero-argument callable returning the documents (read twice)."""
        word_counts: Counter = Counter()
        for doc in documents():
            for sent in doc:
                word_counts.update(sent)
        self.vocab = frozenset(
            {w for w, c in word_counts.items() if c >= self.unk_threshold} | {UNK, EOS}
        )
        top: dict[tuple, Counter] = defaultdict(Counter)
        n_events = 0
        for doc in documents():
            for ctx, y, _ in self._stream(doc):
                top[ctx][y] += 1
                n_events += 1
        if n_events == 0:
            raise ValueError("empty training data")
        self.tables = [dict() for _ in range(self.n)]
        self.tables[self.n - 1] = dict(top)
        if self.smoothing == "kn":
            for k in range(self.n - 2, -1, -1):
                lower: dict[tuple, Counter] = defaultdict(Counter)
                for ctx, nexts in self.tables[k + 1].items():
                    for y in nexts:
                        lower[ctx[1:]][y] += 1
                self.tables[k] = dict(lower)
        self._index()
        return self

    def _index(self) -> None:
        self._totals = [
            {ctx: (sum(c.values()), len(c)) for ctx, c in table.items()} for table in self.tables
        ]

    # -- probabilities

    def prob(self, y: str, context: Sequence[str]) -> float:
        """P(y | context); ``context`` is the preceding events (BOS-padded)."""
        k = self.n - 1
        ctx = tuple(context[len(context) - k:]) if k else ()
        V = len(self.vocab)
        if self.smoothing == "kn":
            return self._kn(y, ctx, k, V)
        table, totals = self.tables[k], self._totals[k]
        c = table[ctx].get(y, 0) if ctx in table else 0
        C = totals.get(ctx, (0, 0))[0]
        if self.smoothing == "add-alpha":
            return (c + self.alpha) / (C + self.alpha * V)
        if C == 0:
            raise InfiniteSurprisalError(f"MLE has no estimate after unseen context {ctx!r}")
        return c / C

    def _kn(self, y: str, ctx: tuple, k: int, V: int) -> float:
        p = 1.0 / V
        d = self.discount
        for j in range(0, k + 1):
            sub = ctx[len(ctx) - j:] if j else ()
            tot = self._totals[j].get(sub)
            if tot is None or tot[0] == 0:
                continue
            C, T = tot
            c = self.tables[j][sub].get(y, 0)
            p = max(c - d, 0.0) / C + d * T / C * p
        return p

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        return {y: self.prob(y, context) for y in self.events}

    def surprisal(self, y: str, context: Sequence[str]) -> float:
        p = self.prob(y, context)
        if p <= 0.0:
            raise InfiniteSurprisalError(f"zero probability for {y!r}")
        return -math.log2(p)

    def score_document(self, sentences: Sequence[Sequence[str]]) -> list[tuple[list[float], float]]:
        """Per sentence: (word surprisals in bits, EOS surprisal)."""
        out: list[tuple[list[float], float]] = []
        cur: list[float] = []
        for ctx, y, pos in self._stream(sentences):
            s = self.surprisal(y, ctx)
            if pos == -1:
                out.append((cur, s))
                cur = []
            else:
                cur.append(s)
        return out

    # -- persistence

    def save(self, path) -> None:
        payload = {
            "format": "uidorder-ngram",
            "version": MODEL_VERSION,
            "n": self.n,
            "smoothing": self.smoothing,
            "alpha": self.alpha,
            "discount": self.discount,
            "unk_threshold": self.unk_threshold,
            "meta": self.meta,
            "vocab": sorted(self.vocab),
            "tables": [
                sorted([list(ctx), sorted(c.items())] for ctx, c in table.items())
                for table in self.tables
            ],
        }
        raw = json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(raw)
        with open(path, "wb") as f:
            f.write(MODEL_MAGIC + bytes([MODEL_VERSION]) + buf.getvalue())

    @classmethod
    def load(cls, path) -> "NGramModel":
        data = Path(path).read_bytes()
        if not data.startswith(MODEL_MAGIC):
            raise ModelFormatError(f"{path}: not a model file")
        version = data[len(MODEL_MAGIC)]
        if version != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported model format version {version}")
        payload = json.loads(gzip.decompress(data[len(MODEL_MAGIC) + 1:]).decode("utf-8"))
        m = cls(payload["n"], payload["smoothing"], payload["alpha"], payload["discount"],
                payload["unk_threshold"])
        m.vocab = frozenset(payload["vocab"])
        m.meta = payload.get("meta", {})
        m.tables = [
            {tuple(ctx): Counter(dict((y, c) for y, c in items)) for ctx, items in table}
            for table in payload["tables"]
        ]
        m._index()
        return m


def _documents_from_records(records: Iterable[SentenceRecord]) -> Iterator[list[tuple[str, ...]]]:
    for doc in iter_documents(records):
        yield [r.words for r in doc]


def train_ngram(records: Iterable[SentenceRecord], n: int = 4, smoothing: str = "kn", *,
                alpha: float = 1.0, discount: float = 0.75, unk_threshold: int = 2) -> NGramModel:
    """Train on a re-iterable record collection (a list or a RecordFile)."""
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    model = NGramModel(n, smoothing, alpha=alpha, discount=discount, unk_threshold=unk_threshold)
    return model.fit(lambda: _documents_from_records(records))


def train_ngram_sequences(documents: Sequence[Sequence[Sequence[str]]], n: int, smoothing: str = "kn",
                          **kw) -> NGramModel:
    """Train directly on documents given as lists of unit sequences (no terminator convention)."""
    return NGramModel(n, smoothing, **kw).fit(lambda: documents)


# ---------------------------------------------------------------------------
# surprisal records


@dataclass(frozen=True)
class SurprisalRecord:
    doc_id: str
    sent_idx: int
    surprisals: tuple[float, ...]
    eos_surprisal: float | None = None

    def __post_init__(self):
        if any(not s >= 0 for s in self.surprisals):
            raise ValueError(f"{self.doc_id}/{self.sent_idx}: surprisals must be >= 0")

    @property
    def doc_initial(self) -> bool:
        return self.sent_idx == 0


def _ordered_documents(records: Iterable[SentenceRecord]) -> Iterator[list[SentenceRecord]]:
    done: set[str] = set()
    for doc in iter_documents(records):
        doc_id = doc[0].doc_id
        if doc_id in done:
            raise DocumentOrderError(f"document {doc_id!r} is not contiguous in the input")
        done.add(doc_id)
        for a, b in zip(doc, doc[1:]):
            if b.sent_idx <= a.sent_idx:
                raise DocumentOrderError(f"document {doc_id!r}: sentence {b.sent_idx} follows {a.sent_idx}")
        yield doc


def score(model: NGramModel, records: Iterable[SentenceRecord]) -> Iterator[SurprisalRecord]:
    for doc in _ordered_documents(records):
        scored = model.score_document([r.words for r in doc])
        for r, (surps, eos) in zip(doc, scored):
            yield SurprisalRecord(r.doc_id, r.sent_idx, tuple(surps), eos)


TSV_HEADER = "doc_id\tsent_idx\tword_idx\tunit\tsurprisal_bits"


def export_surprisals(pairs: Iterable[tuple[SentenceRecord, SurprisalRecord]], dest,
                      header_comment: str | None = None) -> None:
    own = isinstance(dest, (str, Path))
    f = open(dest, "w", encoding="utf-8", newline="\n") if own else dest
    try:
        if header_comment:
            f.write(f"# {header_comment}\n".replace("\t", " "))
        f.write(TSV_HEADER + "\n")
        for rec, srec in pairs:
            if (rec.doc_id, rec.sent_idx) != (srec.doc_id, srec.sent_idx) or len(rec.words) != len(srec.surprisals):
                raise AlignmentError(f"record/surprisal mismatch at ({rec.doc_id}, {rec.sent_idx})")
            for i, (w, s) in enumerate(zip(rec.words, srec.surprisals)):
                f.write(f"{rec.doc_id}\t{rec.sent_idx}\t{i}\t{w}\t{s!r}\n")
            if srec.eos_surprisal is not None:
                f.write(f"{rec.doc_id}\t{rec.sent_idx}\t-1\t{EOS}\t{srec.eos_surprisal!r}\n")
    finally:
        if own:
            f.close()


def _read_rows(source) -> Iterator[tuple[str, int, int, float, int]]:
    own = isinstance(source, (str, Path))
    f = open(source, encoding="utf-8") if own else source
    try:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or (line.startswith("#") and "\t" not in line) or line == TSV_HEADER:
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise AlignmentError(f"line {line_no}: expected 5 columns, got {len(cols)}")
            try:
                sent_idx, word_idx, s = int(cols[1]), int(cols[2]), float(cols[4])
            except ValueError:
                raise AlignmentError(f"line {line_no}: unparsable number") from None
            if not s >= 0:
                raise AlignmentError(f"line {line_no}: negative or NaN surprisal {cols[4]}")
            yield cols[0], sent_idx, word_idx, s, line_no
    finally:
        if own:
            f.close()


def import_external_surprisals(source, corpus: Iterable[SentenceRecord] | None = None
                               ) -> Iterator[SurprisalRecord]:
    """Sum sub-word surprisals per word; rows with word_idx -1 give the EOS surprisal.

    Rows of one sentence must be contiguous. With ``corpus`` given, sentences
    must appear in corpus order with matching word counts.
    """
    corpus_iter = iter(corpus) if corpus is not None else None
    for (doc_id, sent_idx), rows in groupby(_read_rows(source), key=lambda r: (r[0], r[1])):
        per_word: dict[int, float] = {}
        eos: float | None = None
        for _, _, word_idx, s, line_no in rows:
            if word_idx == -1:
                eos = s if eos is None else eos + s
            elif word_idx < 0:
                raise AlignmentError(f"line {line_no}: bad word index {word_idx}")
            else:
                per_word[word_idx] = per_word.get(word_idx, 0.0) + s
        n = len(per_word)
        if sorted(per_word) != list(range(n)):
            missing = sorted(set(range(max(per_word, default=-1) + 1)) - set(per_word))
            raise AlignmentError(f"({doc_id}, {sent_idx}): missing word indices {missing}")
        if corpus_iter is not None:
            rec = next(corpus_iter, None)
            if rec is None or (rec.doc_id, rec.sent_idx) != (doc_id, sent_idx):
                raise AlignmentError(f"({doc_id}, {sent_idx}): not the next corpus sentence")
            if len(rec.words) != n:
                raise AlignmentError(
                    f"({doc_id}, {sent_idx}): {n} words in surprisal file, {len(rec.words)} in corpus"
                )
        yield SurprisalRecord(doc_id, sent_idx, tuple(per_word[i] for i in range(n)), eos)
    if corpus_iter is not None:
        rec = next(corpus_iter, None)
        if rec is not None:
            raise AlignmentError(f"({rec.doc_id}, {rec.sent_idx}): no surprisals for corpus sentence")


# ---------------------------------------------------------------------------
# exact finite languages


@dataclass(frozen=True)
class FiniteLanguage:
    strings: tuple[tuple[str, ...], ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.strings) != len(self.probabilities) or not self.strings:
            raise ValueError("need one probability per string")
        if len(set(self.strings)) != len(self.strings):
            raise ValueError("strings must be distinct")
        if any(p <= 0 for p in self.probabilities):
            raise ValueError("probabilities must be positive")
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def uniform(cls, strings: Iterable[Sequence[str]]) -> "FiniteLanguage":
        strings = tuple(tuple(s) for s in strings)
        return cls(strings, tuple(1.0 / len(strings) for _ in strings))

    def prob(self, s: Sequence[str]) -> float:
        s = tuple(s)
        return next((p for x, p in zip(self.strings, self.probabilities) if x == s), 0.0)


def exact_unit_surprisals(L: FiniteLanguage, string: Sequence[str]) -> list[float]:
    """-log2 p(unit | prefix) for every unit of ``string``, then the EOS event."""
    s = tuple(string)
    if L.prob(s) <= 0:
        raise ValueError(f"{s!r} has zero probability")

    def prefix_mass(prefix: tuple) -> float:
        k = len(prefix)
        return math.fsum(p for x, p in zip(L.strings, L.probabilities) if x[:k] == prefix)

    out = []
    prev = 1.0
    for i in range(len(s)):
        cur = prefix_mass(s[: i + 1])
        out.append(-math.log2(cur / prev) + 0.0)
        prev = cur
    out.append(-math.log2(L.prob(s) / prev) + 0.0)
    return out


def exact_entropy(L: FiniteLanguage) -> float:
    return -math.fsum(p * math.log2(p) for p in L.probabilities) + 0.0


def transform_language(L: FiniteLanguage, f: Callable[[Sequence[str]], Sequence[str]]) -> FiniteLanguage:
    """Pushforward of ``L`` through ``f``; strings that collide pool their probability."""
    mass: dict[tuple, list[float]] = {}
    for s, p in zip(L.strings, L.probabilities):
        mass.setdefault(tuple(f(s)), []).append(p)
    strings = tuple(mass)
    return FiniteLanguage(strings, tuple(math.fsum(mass[s]) for s in strings))


def sample_language(L: FiniteLanguage, size: int, rng) -> list[tuple[str, ...]]:
    """Draw ``size`` i.i.d. strings; ``rng`` is a numpy Generator."""
    idx = rng.choice(len(L.strings), size=size, p=list(L.probabilities))
    return [L.strings[i] for i in idx]
