"""Ordering functions and the real/counterfactual word-order variants."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .treebank import DepTree, Token

log = logging.getLogger(__name__)

TERMINATOR = "."

VARIANTS = (
    "Real",
    "Approx",
    "Random1",
    "Random2",
    "Random3",
    "Random4",
    "Random5",
    "Efficient-OV",
    "Efficient-VO",
    "Min-DL-Opt",
    "Min-DL-Loc",
    "Sort-Freq",
    "Sort-Freq-Rev",
    "Reverse",
)
# variants whose word order comes from a linearized dependency tree
TREE_VARIANTS = frozenset(VARIANTS[1:11])
WEIGHT_FILE_VARIANTS = frozenset({"Approx", "Efficient-OV", "Efficient-VO"})

# UD v2 universal relations, excluding "root" which never orders against a head
UD_RELATIONS = (
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp",
    "clf", "compound", "conj", "cop", "csubj", "dep", "det", "discourse",
    "dislocated", "expl", "fixed", "flat", "goeswith", "iobj", "list", "mark",
    "nmod", "nsubj", "nummod", "obj", "obl", "orphan", "parataxis", "punct",
    "reparandum", "vocative", "xcomp",
)

OrderingFunction = Callable[[DepTree, int], Sequence[int]]


class ContractViolation(RuntimeError):
    """An ordering function or order argument broke its contract."""


class GrammarFileError(ValueError):
    pass


@dataclass(frozen=True)
class ConsistentGrammar:
    """Per-relation weights in [-1, 1]; dependents are sorted by weight around a head at 0."""

    weights: Mapping[str, float]
    name: str = "grammar"
    default_weight: float = 0.0
    _unseen: set = field(default_factory=set, compare=False, repr=False)

    def __post_init__(self):
        for label, w in self.weights.items():
            if not -1.0 <= w <= 1.0:
                raise ValueError(f"weight for {label!r} outside [-1, 1]: {w}")

    def weight(self, label: str) -> float:
        w = self.weights.get(label)
        if w is None:
            if label not in self._unseen:
                self._unseen.add(label)
                log.info("grammar %s: no weight for %r, using %s", self.name, label, self.default_weight)
            return self.default_weight
        return w

    def __call__(self, t: DepTree, node: int) -> list[int]:
        return order_consistent(self, t, node)


def order_consistent(g: ConsistentGrammar, t: DepTree, node: int) -> list[int]:
    """Order ``node`` and its dependents ascending by weight; the head sits at 0.

    Equal weights keep surface order, and a dependent weighted exactly 0
    follows the head.
    """
    deps = t.children().get(node, [])
    if not deps:
        return [node]
    keyed = [(0.0, 0, node)]
    keyed.extend((g.weight(t.token(d).deprel), 1, d) for d in deps)
    keyed.sort()
    return [k[2] for k in keyed]


def linearize(t: DepTree, g: OrderingFunction) -> list[Token]:
    """Depth-first yield of ``t`` where ``g`` orders each node with its dependents."""
    if not t.tokens:
        return []
    kids = t.children()
    out: list[int] = []
    stack: list[tuple[int, Iterable[int]]] = []

    def expand(node: int):
        ordering = list(g(t, node))
        expected = {node, *kids.get(node, [])}
        if len(ordering) != len(expected) or set(ordering) != expected:
            raise ContractViolation(
                f"ordering for node {node} is {ordering}, not a permutation of {sorted(expected)}"
            )
        stack.append((node, iter(ordering)))

    expand(t.root())
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
        elif nxt == node:
            out.append(node)
        else:
            expand(nxt)
    return [t.token(i) for i in out]


def _indices(t: DepTree, order: Sequence) -> list[int]:
    idx = [o.index if isinstance(o, Token) else int(o) for o in order]
    if sorted(idx) != list(range(1, len(t.tokens) + 1)):
        raise ContractViolation(f"order {idx} is not a permutation of the tree's tokens")
    return idx


def total_dependency_length(t: DepTree, order: Sequence) -> int:
    idx = _indices(t, order)
    pos = {i: p for p, i in enumerate(idx)}
    return sum(abs(pos[tok.index] - pos[tok.head]) for tok in t.tokens if tok.head != 0)


def is_projective(t: DepTree, order: Sequence) -> bool:
    """True iff every subtree covers a contiguous span of ``order``."""
    idx = _indices(t, order)
    pos = {i: p for p, i in enumerate(idx)}
    kids = t.children()
    lo = dict(pos)
    hi = dict(pos)
    size = dict.fromkeys(pos, 1)
    stack = [(t.root(), False)]
    while stack:
        node, done = stack.pop()
        if not done:
            stack.append((node, True))
            stack.extend((c, False) for c in kids.get(node, []))
            continue
        for c in kids.get(node, []):
            lo[node] = min(lo[node], lo[c])
            hi[node] = max(hi[node], hi[c])
            size[node] += size[c]
        if hi[node] - lo[node] + 1 != size[node]:
            return False
    return True


# ---------------------------------------------------------------------------
# grammar construction


def make_random_grammar(index: int, labels: Sequence[str] = UD_RELATIONS) -> ConsistentGrammar:
    """Random consistent grammar shared by every language that uses ``index``.

    Weights come from a PCG64 stream seeded only by ``index``.
    """
    rng = np.random.Generator(np.random.PCG64(index))
    draws = rng.uniform(-1.0, 1.0, size=len(labels))
    return ConsistentGrammar(
        weights={lab: float(w) for lab, w in zip(labels, draws)}, name=f"Random{index}"
    )


def load_grammar(source, name: str | None = None, default_weight: float = 0.0) -> ConsistentGrammar:
    """Read ``deprel<TAB>weight`` lines. Out-of-range weights are clamped with a warning."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        name = name or path.stem
        text = path.read_text(encoding="utf-8")
    else:
        text = source.read()
    weights: dict[str, float] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GrammarFileError(f"line {line_no}: expected 'deprel<TAB>weight', got {line!r}")
        label, raw = parts
        try:
            w = float(raw.replace("−", "-"))
        except ValueError:
            raise GrammarFileError(f"line {line_no}: unparsable weight {raw!r} for {label!r}") from None
        if not math.isfinite(w):
            raise GrammarFileError(f"line {line_no}: non-finite weight for {label!r}")
        if label in weights:
            raise GrammarFileError(f"line {line_no}: duplicate label {label!r}")
        if not -1.0 <= w <= 1.0:
            clamped = min(1.0, max(-1.0, w))
            log.warning("weight %s for %r clamped to %s", w, label, clamped)
            w = clamped
        weights[label] = w
    return ConsistentGrammar(weights=weights, name=name or "grammar", default_weight=default_weight)


def save_grammar(g: ConsistentGrammar, path, comment: str | None = None) -> None:
    lines = [f"# {comment}\n"] if comment else []
    lines += [f"{lab}\t{w!r}\n" for lab, w in sorted(g.weights.items())]
    Path(path).write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# dependency length minimization


def _subtree_sizes(t: DepTree) -> dict[int, int]:
    kids = t.children()
    size = {tok.index: 1 for tok in t.tokens}
    stack = [(t.root(), False)]
    while stack:
        node, done = stack.pop()
        if done:
            for c in kids.get(node, []):
                size[node] += size[c]
        else:
            stack.append((node, True))
            stack.extend((c, False) for c in kids.get(node, []))
    return size


def min_dl_local_order(t: DepTree) -> list[Token]:
    """Projective order with minimal total dependency length.

    At each head the dependent subtrees, smallest first, alternate between the
    two sides, nearest the head first. Below the root the parent is treated as
    one more, largest, item so that it lands on the side it actually occupies.
    """
    if not t.tokens:
        return []
    kids = t.children()
    size = _subtree_sizes(t)
    local: dict[int, list[int]] = {}
    # parent_side: -1 parent is to the left, +1 to the right, 0 root
    todo = [(t.root(), 0)]
    while todo:
        node, parent_side = todo.pop()
        deps = sorted(kids.get(node, []), key=lambda c: (size[c], c))
        k = len(deps)
        first = -1  # item 0 goes left at the root
        if parent_side and (k % 2 == 0) != (parent_side == -1):
            first = 1
        left: list[int] = []
        right: list[int] = []
        for i, c in enumerate(deps):
            side = first if i % 2 == 0 else -first
            (left if side == -1 else right).append(c)
            todo.append((c, 1 if side == -1 else -1))
        local[node] = left[::-1] + [node] + right
    return linearize(t, lambda _t, n: local[n])


# ---------------------------------------------------------------------------
# string-level variants


def _split_terminator(words: Sequence[str]) -> tuple[list[str], list[str]]:
    words = list(words)
    if words and words[-1] == TERMINATOR:
        return words[:-1], [TERMINATOR]
    return words, []


def sort_freq_transform(words: Sequence[str], freq: Mapping[str, int], direction: str = "desc") -> list[str]:
    """Sort by frequency; equal frequencies fall back to the word itself, so the output
    depends only on the multiset of words. The terminator stays last."""
    if direction not in ("desc", "asc"):
        raise ValueError(f"direction must be 'desc' or 'asc', not {direction!r}")
    body, tail = _split_terminator(words)
    sign = -1 if direction == "desc" else 1
    return sorted(body, key=lambda w: (sign * freq.get(w, 0), w)) + tail


def reverse_transform(words: Sequence[str]) -> list[str]:
    body, tail = _split_terminator(words)
    return body[::-1] + tail


# ---------------------------------------------------------------------------
# consistency audit


class ConsistencyViolation(NamedTuple):
    kind: str  # "side" or "order"
    relations: tuple[str, ...]
    where: str


def check_consistency(pairs: Iterable[tuple[DepTree, Sequence]]) -> list[ConsistencyViolation]:
    """Find relations that switch sides, and same-side relation pairs that swap order."""
    side_of: dict[str, tuple[int, str]] = {}
    precedes: dict[tuple[int, str, str], str] = {}
    violations: list[ConsistencyViolation] = []
    reported: set = set()
    for t, order in pairs:
        idx = _indices(t, order)
        pos = {i: p for p, i in enumerate(idx)}
        where = f"{t.doc_id}/{t.sent_idx}"
        for head, deps in t.children().items():
            if head == 0 or not deps:
                continue
            sides: dict[int, list[tuple[int, str]]] = {-1: [], 1: []}
            for d in deps:
                rel = t.token(d).deprel
                side = -1 if pos[d] < pos[head] else 1
                sides[side].append((pos[d], rel))
                seen = side_of.setdefault(rel, (side, where))
                if seen[0] != side and ("side", rel) not in reported:
                    reported.add(("side", rel))
                    violations.append(ConsistencyViolation("side", (rel,), f"{seen[1]} vs {where}"))
            for side, items in sides.items():
                items.sort()
                for i, (_, r1) in enumerate(items):
                    for _, r2 in items[i + 1:]:
                        if r1 == r2:
                            continue
                        precedes.setdefault((side, r1, r2), where)
                        other = precedes.get((side, r2, r1))
                        key = ("order", side, *sorted((r1, r2)))
                        if other is not None and key not in reported:
                            reported.add(key)
                            violations.append(
                                ConsistencyViolation("order", tuple(sorted((r1, r2))), f"{other} vs {where}")
                            )
    return violations


# ---------------------------------------------------------------------------
# Min-DL-Opt grammar search


class _TreeShape:
    """Per-tree arrays for evaluating consistent-grammar dependency length without linearizing."""

    __slots__ = ("heads",)

    def __init__(self, t: DepTree, label_id: Mapping[str, int]):
        kids = t.children()
        size = _subtree_sizes(t)
        self.heads = []
        for node, deps in kids.items():
            if node == 0 or not deps:
                continue
            self.heads.append(
                (node, [(label_id[t.token(d).deprel], size[d], d) for d in deps])
            )


def _consistent_dl(shape: _TreeShape, w: np.ndarray) -> int:
    # weight < 0 puts a dependent left of its head, otherwise right
    inner_left: dict[int, int] = {}
    inner_right: dict[int, int] = {}
    for node, deps in shape.heads:
        inner_left[node] = sum(s for lab, s, _ in deps if w[lab] < 0)
        inner_right[node] = sum(s for lab, s, _ in deps if w[lab] >= 0)
    total = 0
    for node, deps in shape.heads:
        # both lists nearest-to-head first
        left = sorted((w[lab], d, s) for lab, s, d in deps if w[lab] < 0)[::-1]
        right = sorted((w[lab], d, s) for lab, s, d in deps if w[lab] >= 0)
        between = 0
        for _, d, s in left:
            total += 1 + between + inner_right.get(d, 0)
            between += s
        between = 0
        for _, d, s in right:
            total += 1 + between + inner_left.get(d, 0)
            between += s
    return total


def optimize_min_dl_grammar(
    trees: Sequence[DepTree],
    seed: int,
    iterations: int,
    restarts: int = 4,
    labels: Sequence[str] | None = None,
    return_trace: bool = False,
):
    """Coordinate search for a consistent grammar with low mean dependency length.

    Each step redraws or perturbs one relation's weight and keeps the move iff
    the sample's mean total dependency length does not increase. The best of
    ``restarts`` independent runs wins, ties going to the earliest restart.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not trees:
        raise ValueError("need a non-empty tree sample")
    if labels is None:
        labels = sorted({tok.deprel for t in trees for tok in t.tokens if tok.head != 0})
    labels = list(labels)
    label_id = {lab: i for i, lab in enumerate(labels)}
    shapes = [_TreeShape(t, label_id) for t in trees]
    n = len(shapes)

    def objective(w: np.ndarray) -> float:
        return sum(_consistent_dl(s, w) for s in shapes) / n

    best_w, best_obj, best_trace = None, math.inf, []
    for r in range(restarts):
        rng = np.random.Generator(np.random.PCG64([seed, r]))
        w = rng.uniform(-1.0, 1.0, size=len(labels))
        obj = objective(w)
        trace = [obj]
        for _ in range(iterations):
            j = int(rng.integers(len(labels))) if labels else 0
            if not labels:
                break
            cand = w.copy()
            if rng.random() < 0.5:
                cand[j] = rng.uniform(-1.0, 1.0)
            else:
                cand[j] = float(np.clip(w[j] + rng.normal(0.0, 0.25), -1.0, 1.0))
            c_obj = objective(cand)
            if c_obj <= obj:
                w, obj = cand, c_obj
            trace.append(obj)
        if obj < best_obj:
            best_w, best_obj, best_trace = w, obj, trace
    g = ConsistentGrammar(
        weights={lab: float(x) for lab, x in zip(labels, best_w)}, name="Min-DL-Opt"
    )
    if return_trace:
        return g, best_trace
    return g


def mean_consistent_dl(trees: Sequence[DepTree], g: ConsistentGrammar) -> float:
    return sum(total_dependency_length(t, linearize(t, g)) for t in trees) / len(trees)
