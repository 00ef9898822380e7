import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclang.grammar import (
    GrammarError,
    NotInLanguageError,
    ParseTree,
    ResampleLimitError,
    Role,
    default_grammar,
    derivation_nll,
    parse_grammar_text,
    recognize,
    sample_symbolic,
    string_probability,
    tree_leaves,
    tree_stats,
)

from oracles import enumerate_language, length_pmf

R = Role


class TestDefaultGrammar:
    def test_start_rule_probability(self, grammar):
        assert grammar.rules_for("S") == [(("sNP", "VP"), 1.0)]

    def test_probabilities_sum_to_one_per_lhs(self, grammar):
        for lhs in grammar.nonterminals:
            assert math.isclose(sum(p for _, p in grammar.rules_for(lhs)), 1.0, abs_tol=1e-9)

    def test_max_length(self, grammar):
        assert grammar.max_length == 75

    def test_role_alphabet(self):
        assert len(Role) == 11
        assert Role.EOS.value == "EOS"

    def test_validation_rejects_bad_probability_sum(self, grammar):
        bad = type(grammar)(
            nonterminals=frozenset({"S"}),
            start="S",
            rules=((("S"), (R.SUBJ,), 0.5),),
        )
        with pytest.raises(GrammarError):
            bad.validate()


class TestSampler:
    def test_round_trip_property(self, grammar):
        rng = np.random.default_rng(1)
        for _ in range(500):
            sent = sample_symbolic(grammar, rng)
            assert recognize(grammar, sent.roles) is not None

    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_leaves_match_tree_and_respect_cap(self, grammar, seed):
        sent = sample_symbolic(grammar, np.random.default_rng(seed))
        assert tree_leaves(sent.tree) == sent.roles
        assert 1 <= len(sent.roles) <= grammar.max_length
        assert R.EOS not in sent.roles

    def test_determinism(self, grammar):
        a = sample_symbolic(grammar, np.random.default_rng(99)).roles
        b = sample_symbolic(grammar, np.random.default_rng(99)).roles
        assert a == b

    def test_tree_nodes_match_rules(self, grammar):
        rules = set()
        for lhs, rhs, _ in grammar.rules:
            rules.add((lhs, rhs))
        rng = np.random.default_rng(3)

        def check(node: ParseTree):
            if node.is_leaf:
                return
            assert (node.symbol, tuple(c.symbol for c in node.children)) in rules
            for c in node.children:
                check(c)

        for _ in range(200):
            check(sample_symbolic(grammar, rng).tree)

    def test_minimal_skeleton_reachable(self, grammar):
        # the short descriptive pattern must occur among a few thousand draws
        rng = np.random.default_rng(0)
        target = (R.EADJ, R.SUBJ, R.LVERB, R.DADJ, R.DESC)
        assert any(
            sample_symbolic(grammar, rng).roles == target for _ in range(3000)
        )

    def test_resample_limit_error(self):
        # a grammar that can only produce strings longer than its cap
        text = "S -> sT sT [1.0]\nsT -> Subj Subj [1.0]\n"
        g = parse_grammar_text(text, max_length=3)
        with pytest.raises(ResampleLimitError):
            sample_symbolic(g, np.random.default_rng(0))


class TestRecognizer:
    def test_accepts_short_descriptive(self, grammar):
        tree = recognize(grammar, [R.SUBJ, R.LVERB, R.DESC])
        assert tree is not None
        assert tree_leaves(tree) == (R.SUBJ, R.LVERB, R.DESC)

    def test_rejects_swapped_order(self, grammar):
        assert recognize(grammar, [R.LVERB, R.SUBJ, R.DESC]) is None

    def test_rejects_empty_and_eos(self, grammar):
        assert recognize(grammar, []) is None
        assert recognize(grammar, [R.SUBJ, R.LVERB, R.DESC, R.EOS]) is None

    def test_membership_matches_enumeration(self, grammar):
        language = enumerate_language(grammar, 4)
        body = [r for r in Role if r is not Role.EOS]
        strings = [()]
        for _ in range(4):
            strings = [s + (r,) for s in strings for r in body] + strings
        checked = 0
        for s in {tuple(s) for s in strings if len(s) in (3, 4)}:
            expected = s in language
            assert (recognize(grammar, list(s)) is not None) == expected
            checked += 1
        assert checked == 10**3 + 10**4

    def test_max_probability_tree_is_a_valid_parse(self, grammar):
        roles = [R.SUBJ, R.LVERB, R.DESC, R.CONJ, R.VERB, R.PREP, R.OBJ]
        tree = recognize(grammar, roles)
        assert tree is not None and tree_leaves(tree) == tuple(roles)


class TestDerivationNll:
    def test_unique_derivation_value(self, grammar):
        # probability 0.8 * 0.2 * 0.4 * 0.2 through the subject/linking branch
        assert math.isclose(
            derivation_nll(grammar, [R.SUBJ, R.LVERB, R.DESC]), -math.log(0.0128), rel_tol=1e-12
        )

    def test_matches_enumeration_on_all_short_strings(self, grammar):
        language = enumerate_language(grammar, 4)
        for roles, prob in language.items():
            assert math.isclose(string_probability(grammar, list(roles)), prob, rel_tol=1e-12)

    def test_probability_mass_of_short_strings(self, grammar):
        language = enumerate_language(grammar, 4)
        inside_total = sum(
            math.exp(-derivation_nll(grammar, list(roles))) for roles in language
        )
        assert math.isclose(inside_total, sum(language.values()), rel_tol=1e-12)
        # independent length-distribution convolution agrees too
        pmf = length_pmf(grammar, 4)
        assert math.isclose(inside_total, float(pmf.sum()), abs_tol=1e-9)

    def test_unit_probability_rules_contribute_zero(self):
        g = parse_grammar_text("S -> Subj Verb [1.0]\n")
        assert derivation_nll(g, [R.SUBJ, R.VERB]) == 0.0

    def test_not_in_language_error(self, grammar):
        with pytest.raises(NotInLanguageError):
            derivation_nll(grammar, [R.LVERB])

    def test_reference_batch_ranges(self, grammar):
        rng = np.random.default_rng(8)
        nlls = [derivation_nll(grammar, sample_symbolic(grammar, rng).roles) for _ in range(1000)]
        # loose distributional check under this grammar's conventions
        assert 1.0 <= min(nlls) <= 3.0
        assert max(nlls) >= 15.0


class TestTreeStats:
    def test_single_leaf(self):
        assert tree_stats(ParseTree(R.SUBJ)) == (0, 1)

    def test_short_descriptive_depth(self, grammar):
        tree = recognize(grammar, [R.SUBJ, R.LVERB, R.DESC])
        assert tree_stats(tree) == (3, 3)

    def test_batch_depth_range(self, grammar):
        rng = np.random.default_rng(21)
        stats = [tree_stats(sample_symbolic(grammar, rng).tree) for _ in range(1000)]
        depths = [d for d, _ in stats]
        lengths = [l for _, l in stats]
        assert min(depths) == 3 and max(depths) <= 40
        assert min(lengths) >= 3 and max(lengths) <= 75


class TestGrammarText:
    def test_round_trip_of_default_rules(self, grammar):
        lines = []
        for lhs, rhs, p in grammar.rules:
            names = " ".join(s.value if isinstance(s, Role) else s for s in rhs)
            lines.append(f"{lhs} -> {names} [{p}]")
        parsed = parse_grammar_text("\n".join(lines))
        assert parsed.rules == grammar.rules
        assert parsed.nonterminals == grammar.nonterminals

    def test_rejects_malformed_line(self):
        with pytest.raises(GrammarError, match="line 1"):
            parse_grammar_text("S sNP VP [1.0]")

    def test_comments_and_blanks_ignored(self):
        g = parse_grammar_text("# comment\n\nS -> Subj [1.0]\n")
        assert recognize(g, [R.SUBJ]) is not None
