"""CoNLL-U ingestion, tree validation and the pre-linearization transforms."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, NamedTuple

log = logging.getLogger(__name__)

DEFAULT_PROMOTE = frozenset({"case", "cop", "mark", "cc"})


class ConlluError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyTreeError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    upos: str
    head: int
    deprel: str


@dataclass
class DepTree:
    doc_id: str
    sent_idx: int
    tokens: list[Token] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    def token(self, index: int) -> Token:
        return self.tokens[index - 1]

    def children(self) -> dict[int, list[int]]:
        """Map each index (0 for the virtual root) to its dependents in surface order.

        Computed once per tree; trees are treated as immutable after construction.
        """
        kids = self.__dict__.get("_kids")
        if kids is None:
            kids = {t.index: [] for t in self.tokens}
            kids[0] = []
            for t in self.tokens:
                kids.setdefault(t.head, []).append(t.index)
            self.__dict__["_kids"] = kids
        return kids

    def root(self) -> int:
        return next(t.index for t in self.tokens if t.head == 0)

    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]


# ---------------------------------------------------------------------------
# reading / writing


def _lines(stream) -> Iterator[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for raw in stream:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw.rstrip("\r\n")


def _parse_token(line: str, line_no: int) -> Token | None:
    cols = line.split("\t")
    if len(cols) != 10:
        raise ConlluError(line_no, f"expected 10 columns, got {len(cols)}")
    tid = cols[0]
    if "-" in tid or "." in tid:
        return None
    try:
        index = int(tid)
    except ValueError:
        raise ConlluError(line_no, f"non-integer token id {tid!r}") from None
    try:
        head = int(cols[6])
    except ValueError:
        raise ConlluError(line_no, f"non-integer head {cols[6]!r}") from None
    deprel = cols[7].split(":", 1)[0]
    if not deprel or deprel == "_":
        raise ConlluError(line_no, "missing deprel")
    return Token(index=index, form=cols[1], upos=cols[3], head=head, deprel=deprel)


def parse_conllu(
    stream: IO | Iterable | str | bytes,
    strict: bool = False,
    sentences_per_doc: int | None = None,
    stats: dict | None = None,
) -> Iterator[DepTree]:
    """Yield one DepTree per sentence block of a CoNLL-U stream.

    Documents start at ``# newdoc`` comments (``# newdoc id = X`` names the
    document). When the stream carries no newdoc markers and
    ``sentences_per_doc`` is set, a new document starts every that many
    sentences. Malformed sentences are logged and dropped unless ``strict``.
    """
    if stats is None:
        stats = {}
    stats.setdefault("sentences", 0)
    stats.setdefault("errors", 0)
    stats.setdefault("doc_fallback", False)

    doc_counter = -1
    doc_id: str | None = None
    seen_newdoc = False
    sent_idx = 0
    block: list[Token] = []
    bad: ConlluError | None = None
    pending_newdoc: str | None = None

    def flush() -> DepTree | None:
        nonlocal block, bad, doc_id, doc_counter, sent_idx, pending_newdoc
        tokens, err = block, bad
        block, bad = [], None
        if not tokens and err is None:
            return None
        if pending_newdoc is not None or doc_id is None:
            doc_counter += 1
            doc_id = pending_newdoc or f"d{doc_counter}"
            pending_newdoc = None
            sent_idx = 0
        elif not seen_newdoc and sentences_per_doc and sent_idx >= sentences_per_doc:
            doc_counter += 1
            doc_id = f"d{doc_counter}"
            sent_idx = 0
            stats["doc_fallback"] = True
        idx = sent_idx
        sent_idx += 1
        if err is not None:
            stats["errors"] += 1
            if strict:
                raise err
            log.warning("skipping sentence: %s", err)
            return None
        stats["sentences"] += 1
        return DepTree(doc_id=doc_id, sent_idx=idx, tokens=tokens)

    line_no = 0
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            tree = flush()
            if tree is not None:
                yield tree
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("newdoc"):
                seen_newdoc = True
                _, _, rest = body.partition("=")
                pending_newdoc = rest.strip() if "=" in body else ""
                if not pending_newdoc:
                    pending_newdoc = f"d{doc_counter + 1}"
            continue
        if bad is not None:
            continue
        try:
            tok = _parse_token(line, line_no)
        except ConlluError as e:
            bad = e
            continue
        if tok is not None:
            block.append(tok)
    tree = flush()
    if tree is not None:
        yield tree


def write_conllu(trees: Iterable[DepTree], out: IO[str]) -> None:
    current = None
    for t in trees:
        if t.doc_id != current:
            out.write(f"# newdoc id = {t.doc_id}\n")
            current = t.doc_id
        for tok in t.tokens:
            out.write(
                f"{tok.index}\t{tok.form}\t_\t{tok.upos}\t_\t_\t{tok.head}\t{tok.deprel}\t_\t_\n"
            )
        out.write("\n")


# ---------------------------------------------------------------------------
# validation


class Violation(NamedTuple):
    kind: str
    token: int
    message: str


def validate_tree(t: DepTree) -> list[Violation]:
    report: list[Violation] = []
    n = len(t.tokens)
    for pos, tok in enumerate(t.tokens, start=1):
        if tok.index != pos:
            report.append(Violation("bad-index", tok.index, f"expected index {pos}"))
    if not t.tokens:
        report.append(Violation("no-root", 0, "empty tree"))
        return report
    roots = [tok.index for tok in t.tokens if tok.head == 0]
    if not roots:
        report.append(Violation("no-root", 0, "no token attaches to 0"))
    elif len(roots) > 1:
        report.append(Violation("multiple-roots", roots[1], f"roots at {roots}"))
    for tok in t.tokens:
        if tok.head == 0 and tok.deprel != "root":
            report.append(Violation("root-label", tok.index, f"root has deprel {tok.deprel!r}"))
        if tok.head != 0 and tok.deprel == "root":
            report.append(Violation("root-label", tok.index, "non-root token labelled root"))
        if tok.head == tok.index:
            report.append(Violation("cycle", tok.index, "token heads itself"))
        elif tok.head < 0 or tok.head > n:
            report.append(Violation("head-out-of-range", tok.index, f"head {tok.head} not in 0..{n}"))
    if any(v.kind in ("bad-index", "head-out-of-range") for v in report):
        return report

    heads = {tok.index: tok.head for tok in t.tokens}
    state: dict[int, str] = {}  # "root" reaches 0, "cycle" on a cycle, "dangling" reaches a cycle
    for start in heads:
        path: list[int] = []
        on_path: set[int] = set()
        node = start
        while node != 0 and node not in state and node not in on_path:
            path.append(node)
            on_path.add(node)
            node = heads[node]
        if node == 0:
            outcome = "root"
        elif node in state:
            outcome = "root" if state[node] == "root" else "dangling"
        else:
            cyc_start = path.index(node)
            for c in path[cyc_start:]:
                state[c] = "cycle"
            path = path[:cyc_start]
            outcome = "dangling"
        for p in path:
            state[p] = outcome
    for idx in sorted(state):
        if state[idx] == "cycle" and heads[idx] != idx:
            report.append(Violation("cycle", idx, "token lies on a head cycle"))
        elif state[idx] == "dangling":
            report.append(Violation("disconnected", idx, "token does not reach the root"))
    return report


# ---------------------------------------------------------------------------
# transforms


def _postorder(t: DepTree) -> list[int]:
    kids = t.children()
    order: list[int] = []
    stack: list[tuple[int, bool]] = [(t.root(), False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        stack.append((node, True))
        for c in reversed(kids.get(node, [])):
            stack.append((c, False))
    return order


def promote_function_heads(t: DepTree, relations: Iterable[str] = DEFAULT_PROMOTE) -> DepTree:
    """Make function words heads of the content words they attach to.

    A dependent ``d`` attached to ``h`` by one of ``relations`` takes over
    ``h``'s head and relation, and ``h`` attaches below ``d`` with ``d``'s
    old label. Heads are visited bottom-up once; where a head has several
    promotable dependents only the leftmost is promoted.
    """
    relations = frozenset(relations)
    if not relations:
        return t
    heads = {tok.index: tok.head for tok in t.tokens}
    labels = {tok.index: tok.deprel for tok in t.tokens}
    changed = False
    for h in _postorder(t):
        cands = sorted(i for i, hd in heads.items() if hd == h and labels[i] in relations)
        if not cands:
            continue
        d = cands[0]
        heads[d], labels[d], heads[h], labels[h] = heads[h], labels[h], d, labels[d]
        changed = True
    if not changed:
        return t
    tokens = [replace(tok, head=heads[tok.index], deprel=labels[tok.index]) for tok in t.tokens]
    return DepTree(t.doc_id, t.sent_idx, tokens)


def strip_punct(t: DepTree) -> DepTree:
    """Drop ``punct`` tokens, reattaching their dependents to the nearest kept ancestor."""
    drop = {tok.index for tok in t.tokens if tok.deprel == "punct"}
    if not drop:
        return t
    if len(drop) == len(t.tokens):
        raise EmptyTreeError(f"{t.doc_id}/{t.sent_idx}: sentence is punctuation only")
    heads = {tok.index: tok.head for tok in t.tokens}
    kept = [tok for tok in t.tokens if tok.index not in drop]
    new_index = {tok.index: i for i, tok in enumerate(kept, start=1)}
    new_index[0] = 0
    tokens = []
    for tok in kept:
        h = tok.head
        while h in drop:
            h = heads[h]
        tokens.append(replace(tok, index=new_index[tok.index], head=new_index[h]))
    roots = [tok for tok in tokens if tok.head == 0]
    if len(roots) > 1 or roots[0].deprel != "root":
        # the dropped token was the root: its leftmost surviving dependent takes over
        new_root = roots[0].index
        tokens = [
            replace(tok, deprel="root") if tok.index == new_root
            else replace(tok, head=new_root) if tok.head == 0
            else tok
            for tok in tokens
        ]
    return DepTree(t.doc_id, t.sent_idx, tokens)
