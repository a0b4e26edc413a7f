import itertools
import random
from functools import lru_cache

import pytest

from uidorder import TOY_TREEBANK, WEIGHT_FILES
from uidorder.treebank import DepTree, Token, parse_conllu

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def make_tree(heads, labels=None, forms=None, doc_id="d0", sent_idx=0) -> DepTree:
    """Tree from 1-based head indices (0 marks the root)."""
    n = len(heads)
    labels = labels or ["root" if h == 0 else "dep" for h in heads]
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    toks = [Token(i, forms[i - 1], "X", heads[i - 1], labels[i - 1]) for i in range(1, n + 1)]
    return DepTree(doc_id, sent_idx, toks)


def random_heads(n: int, rng: random.Random) -> list[int]:
    """Random rooted tree over surface positions 1..n."""
    order = list(range(1, n + 1))
    rng.shuffle(order)
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = order[rng.randrange(k)]
    return heads


def canonical_shape(heads) -> str:
    kids = {i: [] for i in range(len(heads) + 1)}
    for i, h in enumerate(heads, start=1):
        kids[h].append(i)

    def enc(v):
        return "(" + "".join(sorted(enc(c) for c in kids[v])) + ")"

    return enc(kids[0][0])


def _is_projective_by_arcs(heads, order) -> bool:
    # no two arcs cross, and no arc covers the root
    pos = {tok: p for p, tok in enumerate(order)}
    arcs = [(min(pos[i], pos[h]), max(pos[i], pos[h])) for i, h in enumerate(heads, start=1) if h]
    root_pos = pos[heads.index(0) + 1]
    for a, b in arcs:
        if a < root_pos < b:
            return False
    for (a, b), (c, d) in itertools.combinations(arcs, 2):
        if a < c < b < d or c < a < d < b:
            return False
    return True


def _dl(heads, order) -> int:
    pos = {tok: p for p, tok in enumerate(order)}
    return sum(abs(pos[i] - pos[h]) for i, h in enumerate(heads, start=1) if h)


@lru_cache(maxsize=None)
def _brute_min_dl_for_shape(shape: str, heads: tuple) -> int:
    n = len(heads)
    best = None
    for order in itertools.permutations(range(1, n + 1)):
        if _is_projective_by_arcs(heads, order):
            d = _dl(heads, order)
            best = d if best is None else min(best, d)
    return best


_SHAPE_CACHE: dict[str, int] = {}


def brute_min_projective_dl(heads) -> int:
    """Minimum total DL over all projective orders, by full permutation enumeration.

    The optimum depends only on the unlabeled rooted shape, so results are cached per shape.
    """
    shape = canonical_shape(heads)
    if shape not in _SHAPE_CACHE:
        _SHAPE_CACHE[shape] = _brute_min_dl_for_shape(shape, tuple(heads))
    return _SHAPE_CACHE[shape]


def brute_projective_orders(heads):
    n = len(heads)
    return [o for o in itertools.permutations(range(1, n + 1)) if _is_projective_by_arcs(heads, o)]


@pytest.fixture(scope="session")
def toy_trees():
    with open(TOY_TREEBANK, "rb") as f:
        return list(parse_conllu(f, strict=True))


@pytest.fixture(scope="session")
def weight_files():
    return dict(WEIGHT_FILES)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")
