import io
import itertools
import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_min_projective_dl, brute_projective_orders, make_tree, random_heads
from uidorder.grammars import (
    UD_RELATIONS,
    ConsistentGrammar,
    ContractViolation,
    GrammarFileError,
    _consistent_dl,
    _TreeShape,
    check_consistency,
    is_projective,
    linearize,
    load_grammar,
    make_random_grammar,
    mean_consistent_dl,
    min_dl_local_order,
    optimize_min_dl_grammar,
    order_consistent,
    reverse_transform,
    save_grammar,
    sort_freq_transform,
    total_dependency_length,
)

LABELS = ["nsubj", "obj", "det", "amod", "advmod", "obl", "case"]


def barked_tree():
    return make_tree([2, 3, 0, 3], labels=["det", "nsubj", "root", "advmod"],
                     forms=["the", "dog", "barked", "loudly"])


def forms(toks):
    return " ".join(t.form for t in toks)


def random_tree(rng, n_max=9):
    n = rng.randint(1, n_max)
    heads = random_heads(n, rng)
    labels = ["root" if h == 0 else rng.choice(LABELS) for h in heads]
    return make_tree(heads, labels)


class TestLinearize:
    def test_head_final_trace(self):
        g = ConsistentGrammar({"det": -0.6, "nsubj": -0.3, "advmod": 0.4})
        assert forms(linearize(barked_tree(), g)) == "the dog barked loudly"

    def test_mirrored_trace(self):
        g = ConsistentGrammar({"nsubj": 0.3, "det": 0.5, "advmod": -0.2})
        assert forms(linearize(barked_tree(), g)) == "loudly barked dog the"

    def test_single_token(self):
        t = make_tree([0])
        assert forms(linearize(t, make_random_grammar(1))) == "w1"

    def test_non_permutation_ordering_rejected(self):
        t = make_tree([0, 1])
        with pytest.raises(ContractViolation):
            linearize(t, lambda tree, node: [node])

    def test_deep_chain_no_recursion_limit(self):
        n = 5000
        t = make_tree([0] + list(range(1, n)))
        assert len(linearize(t, make_random_grammar(2))) == n

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 5))
    def test_permutation_and_projective(self, seed, gi):
        t = random_tree(random.Random(seed))
        order = linearize(t, make_random_grammar(gi))
        assert sorted(tok.index for tok in order) == list(range(1, len(t) + 1))
        assert is_projective(t, order)


class TestOrderConsistent:
    def test_sides_by_sign(self):
        t = make_tree([0, 1, 1], labels=["root", "nsubj", "obj"])
        g = ConsistentGrammar({"nsubj": -0.3, "obj": 0.4})
        assert order_consistent(g, t, 1) == [2, 1, 3]

    def test_equal_weights_keep_surface_order(self):
        t = make_tree([3, 3, 0], labels=["a", "b", "root"])
        g = ConsistentGrammar({"a": -0.5, "b": -0.5})
        assert order_consistent(g, t, 3) == [1, 2, 3]

    def test_zero_weight_after_head(self):
        t = make_tree([2, 0], labels=["x", "root"])
        assert order_consistent(ConsistentGrammar({"x": 0.0}), t, 2) == [2, 1]

    def test_leaf(self):
        t = make_tree([0, 1])
        assert order_consistent(ConsistentGrammar({}), t, 2) == [2]

    def test_unseen_label_logged_once(self, caplog):
        t = make_tree([0, 1, 1], labels=["root", "zz", "zz"])
        g = ConsistentGrammar({}, default_weight=0.2)
        with caplog.at_level(logging.INFO, logger="uidorder.grammars"):
            order_consistent(g, t, 1)
            order_consistent(g, t, 1)
        assert sum("zz" in r.getMessage() for r in caplog.records) == 1


class TestRandomGrammar:
    def test_deterministic(self):
        assert make_random_grammar(3).weights == make_random_grammar(3).weights

    def test_distinct_indices(self):
        assert make_random_grammar(1).weights != make_random_grammar(2).weights

    def test_range_and_inventory(self):
        for i in range(1, 6):
            w = make_random_grammar(i).weights
            assert set(w) == set(UD_RELATIONS)
            assert all(-1 <= x <= 1 for x in w.values())


class TestLoadGrammar:
    def test_two_entries(self):
        g = load_grammar(io.StringIO("nsubj\t−0.4\nobj 0.3\n"))
        assert g.weights == {"nsubj": -0.4, "obj": 0.3}

    def test_duplicate_named(self):
        with pytest.raises(GrammarFileError, match="obj"):
            load_grammar(io.StringIO("obj 0.1\nobj 0.2\n"))

    def test_unparsable(self):
        with pytest.raises(GrammarFileError):
            load_grammar(io.StringIO("obj left\n"))

    def test_clamp(self, caplog):
        with caplog.at_level(logging.WARNING):
            g = load_grammar(io.StringIO("obj 1.7\n"))
        assert g.weights["obj"] == 1.0
        assert caplog.records

    def test_save_round_trip(self, tmp_path):
        g = make_random_grammar(4)
        save_grammar(g, tmp_path / "g.tsv", comment="seed=4")
        assert load_grammar(tmp_path / "g.tsv").weights == g.weights

    def test_shipped_files_load(self, weight_files):
        for tag, path in weight_files.items():
            g = load_grammar(path)
            assert len(set(g.weights.values())) == len(g.weights), tag


class TestDependencyLength:
    def test_hand_count(self):
        t = make_tree([2, 3, 0], labels=["det", "nsubj", "root"])
        assert total_dependency_length(t, [1, 2, 3]) == 2

    def test_single(self):
        assert total_dependency_length(make_tree([0]), [1]) == 0

    def test_not_a_permutation(self):
        with pytest.raises(ContractViolation):
            total_dependency_length(make_tree([0, 1]), [1, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**6))
    def test_reverse_preserves(self, seed):
        rng = random.Random(seed)
        t = random_tree(rng)
        order = list(range(1, len(t) + 1))
        rng.shuffle(order)
        assert total_dependency_length(t, order) == total_dependency_length(t, order[::-1])


class TestProjective:
    def test_crossing_arcs(self):
        # 1->3 and 2->4 cross
        t = make_tree([3, 4, 0, 3], labels=["a", "b", "root", "c"])
        assert not is_projective(t, [1, 2, 3, 4])

    def test_two_tokens(self):
        t = make_tree([0, 1])
        assert is_projective(t, [1, 2]) and is_projective(t, [2, 1])

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 10**6))
    def test_agrees_with_arc_oracle(self, seed):
        rng = random.Random(seed)
        heads = random_heads(rng.randint(1, 6), rng)
        t = make_tree(heads)
        proj = set(brute_projective_orders(heads))
        for order in itertools.permutations(range(1, len(heads) + 1)):
            assert is_projective(t, order) == (order in proj)


class TestMinDLLocal:
    def test_star(self):
        t = make_tree([0, 1, 1, 1])
        assert total_dependency_length(t, min_dl_local_order(t)) == 4

    def test_chain(self):
        t = make_tree([0, 1, 2])
        assert total_dependency_length(t, min_dl_local_order(t)) == 2

    def test_single(self):
        t = make_tree([0])
        assert total_dependency_length(t, min_dl_local_order(t)) == 0

    @settings(max_examples=400, deadline=None)
    @given(st.integers(0, 10**6))
    def test_matches_brute_force(self, seed):
        rng = random.Random(seed)
        heads = random_heads(rng.randint(1, 7), rng)
        t = make_tree(heads)
        order = min_dl_local_order(t)
        assert is_projective(t, order)
        assert total_dependency_length(t, order) == brute_min_projective_dl(heads)


class TestSurfaceTransforms:
    FREQ = {"the": 100, "dog": 5, "barked": 2}

    def test_sort_desc(self):
        assert sort_freq_transform(["barked", "the", "dog"], self.FREQ, "desc") == ["the", "dog", "barked"]

    def test_sort_asc(self):
        assert sort_freq_transform(["barked", "the", "dog"], self.FREQ, "asc") == ["barked", "dog", "the"]

    def test_terminator_stays_final(self):
        assert sort_freq_transform(["barked", "the", "."], self.FREQ) == ["the", "barked", "."]

    def test_unknown_word_is_rarest(self):
        out = sort_freq_transform(["zz", "the", "yy", "the"], self.FREQ, "desc")
        assert out == ["the", "the", "yy", "zz"]

    def test_ties_broken_by_word(self):
        freq = {"a": 3, "b": 3, "c": 1}
        assert sort_freq_transform(["b", "c", "a"], freq) == ["a", "b", "c"]
        assert sort_freq_transform(["b", "c", "a"], freq, "asc") == ["c", "a", "b"]

    @given(st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=8), st.randoms())
    def test_depends_only_on_multiset(self, words, rnd):
        freq = {"a": 2, "b": 2, "c": 5, "d": 1}
        shuffled = words[:]
        rnd.shuffle(shuffled)
        for direction in ("desc", "asc"):
            assert sort_freq_transform(words + ["."], freq, direction) == \
                sort_freq_transform(shuffled + ["."], freq, direction)

    def test_equal_multisets_collide(self):
        a = sort_freq_transform(["dog", "the", "barked", "."], self.FREQ)
        b = sort_freq_transform(["the", "barked", "dog", "."], self.FREQ)
        assert a == b

    def test_reverse(self):
        assert reverse_transform(["i", "like", "dogs", "."]) == ["dogs", "like", "i", "."]
        assert reverse_transform(["hi"]) == ["hi"]

    @given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=8))
    def test_reverse_involution(self, words):
        w = words + ["."]
        assert reverse_transform(reverse_transform(w)) == w


class TestConsistency:
    def test_grammar_output_is_consistent(self):
        rng = random.Random(5)
        trees = [random_tree(rng) for _ in range(200)]
        g = make_random_grammar(3)
        assert check_consistency((t, linearize(t, g)) for t in trees) == []

    def test_side_violation(self):
        a = make_tree([2, 0], labels=["nsubj", "root"], forms=["dog", "barked"])
        b = make_tree([0, 1], labels=["root", "nsubj"], forms=["barked", "dog"])
        v = check_consistency([(a, [1, 2]), (b, [1, 2])])
        assert [(x.kind, x.relations) for x in v] == [("side", ("nsubj",))]

    def test_order_violation(self):
        t = make_tree([0, 1, 1], labels=["root", "obj", "obl"])
        v = check_consistency([(t, [1, 2, 3]), (t, [1, 3, 2])])
        assert [x.kind for x in v] == ["order"]

    def test_empty(self):
        assert check_consistency([]) == []


def star(labels):
    n = len(labels) + 1
    return make_tree([0] + [1] * (n - 1), labels=["root"] + list(labels))


class TestOptimizer:
    def test_fast_dl_matches_linearization(self):
        rng = random.Random(11)
        labels = sorted(set(LABELS))
        lid = {lab: i for i, lab in enumerate(labels)}
        for _ in range(300):
            t = random_tree(rng, 12)
            w = np.array([rng.uniform(-1, 1) for _ in labels])
            g = ConsistentGrammar(dict(zip(labels, w)))
            assert _consistent_dl(_TreeShape(t, lid), w) == total_dependency_length(t, linearize(t, g))

    def test_star_sample_reaches_exhaustive_optimum(self):
        sample = [star("abc"), star("aab"), star("cbb"), star("ab"), star("ccca")]
        # every side/rank assignment of three labels is realized by distinct grid weights
        grid = [-0.75, -0.5, -0.25, 0.25, 0.5, 0.75]
        best = min(
            mean_consistent_dl(sample, ConsistentGrammar(dict(zip("abc", ws))))
            for ws in itertools.permutations(grid, 3)
        )
        g = optimize_min_dl_grammar(sample, seed=0, iterations=300)
        assert mean_consistent_dl(sample, g) == best

    def test_trace_non_increasing_and_deterministic(self):
        rng = random.Random(2)
        sample = [random_tree(rng, 10) for _ in range(30)]
        g1, trace = optimize_min_dl_grammar(sample, seed=7, iterations=100, return_trace=True)
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert trace[-1] == mean_consistent_dl(sample, g1)
        g2 = optimize_min_dl_grammar(sample, seed=7, iterations=100)
        assert g1.weights == g2.weights

    def test_zero_iterations_rejected(self):
        with pytest.raises(ValueError):
            optimize_min_dl_grammar([star("ab")], seed=0, iterations=0)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            optimize_min_dl_grammar([], seed=0, iterations=5)
