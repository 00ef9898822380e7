import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclang.corpus import build_vocabulary, populate, perturb
from perclang.grammar import Role, sample_symbolic
from perclang.typegraph import (
    Direction,
    InvalidParamsError,
    KindMismatchError,
    TypeGraphParams,
    TypedToken,
    UnknownIdError,
    UnparsableSentenceError,
    build_typegraph,
    empirical_adjacency,
    extract_bindings,
    load_typegraph,
    query_valid,
    save_typegraph,
    summarize_typegraph,
    type_check,
)

R = Role


class TestBuild:
    def test_default_partition_sizes(self, default_graph):
        g = default_graph
        assert g.n_entities // g.n_classes == 90
        assert g.n_desc_props // g.n_classes == 1800
        assert g.n_verbs // g.n_classes == 20

    def test_seen_descriptor_count_is_15_percent(self, default_graph):
        assert default_graph.seen_desc.shape == (900, 270)
        for e in (0, 250, 899):
            assert len(default_graph.seen_descriptors(e)) == 270

    def test_all_seen_edges_class_consistent(self, default_graph):
        g = default_graph
        for e in range(g.n_entities):
            cls = g.entity_class(e)
            assert all(g.desc_class(int(k)) == cls for k in g.seen_desc[e])
        for e, v in zip(g.verb_edge_entity, g.verb_edge_verb):
            assert g.entity_class(int(e)) == g.verb_class(int(v))

    def test_every_verb_usable_in_both_directions(self, default_graph):
        for v in range(default_graph.n_verbs):
            assert default_graph.seen_subjects(v)
            assert default_graph.seen_objects(v)

    def test_determinism(self):
        params = TypeGraphParams(n_entities=30, n_desc_props=300, n_classes=5, n_verbs=50, seed=3)
        a, b = build_typegraph(params), build_typegraph(params)
        assert np.array_equal(a.seen_desc, b.seen_desc)
        assert np.array_equal(a.verb_edge_verb, b.verb_edge_verb)
        assert np.array_equal(a.verb_edge_dir, b.verb_edge_dir)

    def test_divisibility_error(self):
        with pytest.raises(InvalidParamsError):
            build_typegraph(TypeGraphParams(n_entities=901))

    def test_directions_cover_all_three_tags(self, default_graph):
        tags = set(default_graph.verb_edge_dir.tolist())
        assert tags == {0, 1, 2}


class TestQueries:
    def test_seen_subset_of_class(self, small_graph):
        for e in range(small_graph.n_entities):
            seen = query_valid(small_graph, ("entity", e), "descriptors", "seen")
            cls = query_valid(small_graph, ("entity", e), "descriptors", "class")
            assert seen <= cls

    def test_kind_mismatch(self, small_graph):
        with pytest.raises(KindMismatchError):
            query_valid(small_graph, ("descriptor", 3), "subjects")
        with pytest.raises(KindMismatchError):
            query_valid(small_graph, ("verb", 0), "descriptors")

    def test_unknown_id(self, small_graph):
        with pytest.raises(UnknownIdError):
            query_valid(small_graph, ("entity", 10**6), "descriptors")

    def test_subjects_share_verb_class(self, small_graph):
        for v in range(small_graph.n_verbs):
            cls = small_graph.verb_class(v)
            for e in query_valid(small_graph, ("verb", v), "subjects", "seen"):
                assert small_graph.entity_class(e) == cls

    @given(e=st.integers(min_value=0, max_value=29))
    @settings(max_examples=30, deadline=None)
    def test_seen_cardinality(self, small_graph, e):
        per_class = small_graph.n_desc_props // small_graph.n_classes
        expected = int(np.floor(0.15 * per_class + 0.5))
        assert len(query_valid(small_graph, ("entity", e), "descriptors", "seen")) == expected


def _typed(graph, subj=None, verb=None, obj=None, desc=None):
    """Assemble a minimal role-annotated sentence from ids."""
    toks = []
    if desc is not None:
        toks = [TypedToken(R.SUBJ, subj), TypedToken(R.LVERB), TypedToken(R.DESC, desc)]
    else:
        toks = [
            TypedToken(R.SUBJ, subj),
            TypedToken(R.VERB, verb),
            TypedToken(R.PREP),
            TypedToken(R.OBJ, obj),
        ]
    return toks


class TestTypeCheck:
    def test_same_class_descriptor_passes(self, small_graph):
        res = type_check(small_graph, _grammar(), _typed(small_graph, subj=0, desc=0))
        assert res.descriptive and res.relative and res.all_ok

    def test_cross_class_descriptor_fails(self, small_graph):
        per = small_graph.n_desc_props // small_graph.n_classes
        res = type_check(small_graph, _grammar(), _typed(small_graph, subj=0, desc=per))
        assert not res.descriptive and not res.all_ok and res.relative

    def test_relative_triple(self, small_graph):
        ent_per = small_graph.n_entities // small_graph.n_classes
        verb_per = small_graph.n_verbs // small_graph.n_classes
        ok = type_check(small_graph, _grammar(), _typed(small_graph, subj=0, verb=0, obj=1))
        assert ok.relative and ok.all_ok
        bad = type_check(
            small_graph, _grammar(), _typed(small_graph, subj=0, verb=verb_per, obj=1)
        )
        assert not bad.relative and not bad.all_ok
        bad2 = type_check(
            small_graph, _grammar(), _typed(small_graph, subj=0, verb=0, obj=ent_per)
        )
        assert not bad2.relative

    def test_unparsable_raises(self, small_graph):
        with pytest.raises(UnparsableSentenceError):
            type_check(small_graph, _grammar(), [TypedToken(R.LVERB), TypedToken(R.SUBJ, 0)])

    def test_random_pairing_passes_descriptive_at_one_over_c(self, small_graph, rng):
        # grammatical sentences with uniformly random ids: success rate ~ 1/C
        n, hits = 4000, 0
        for _ in range(n):
            subj = int(rng.integers(small_graph.n_entities))
            desc = int(rng.integers(small_graph.n_desc_props))
            res = type_check(small_graph, _grammar(), _typed(small_graph, subj=subj, desc=desc))
            hits += res.descriptive
        rate = hits / n
        expected = 1 / small_graph.n_classes
        sigma = (expected * (1 - expected) / n) ** 0.5
        assert abs(rate - expected) < 4 * sigma

    def test_sampled_sentences_all_pass(self, small_graph, grammar):
        vocab = build_vocabulary(small_graph)
        rng = np.random.default_rng(17)
        for _ in range(300):
            sent = populate(sample_symbolic(grammar, rng), small_graph, vocab, rng)
            res = type_check(small_graph, grammar, vocab.typed(sent.token_ids))
            assert res.all_ok

    def test_perturbed_sentences_all_fail(self, small_graph, grammar):
        vocab = build_vocabulary(small_graph)
        rng = np.random.default_rng(18)
        for _ in range(300):
            sent = populate(sample_symbolic(grammar, rng), small_graph, vocab, rng)
            bad = perturb(sent, "randomize_values", small_graph, vocab, rng)
            res = type_check(small_graph, grammar, vocab.typed(bad.token_ids))
            assert not res.all_ok


class TestAdjacency:
    def test_empty_stream(self, small_graph):
        out = empirical_adjacency(small_graph, [])
        assert out.shape == (small_graph.n_entities, small_graph.n_desc_props)
        assert out.sum() == 0

    def test_monotone_and_within_seen_mask(self, small_graph, grammar):
        vocab = build_vocabulary(small_graph)
        rng = np.random.default_rng(5)
        bindings = []
        for _ in range(400):
            sent = populate(sample_symbolic(grammar, rng), small_graph, vocab, rng)
            bindings.append(extract_bindings(grammar, vocab.typed(sent.token_ids), tree=sent.tree))
        first = empirical_adjacency(small_graph, bindings[:100])
        both = empirical_adjacency(small_graph, bindings[:100])
        both = empirical_adjacency(small_graph, bindings[100:], out=both)
        assert (first <= both).all()
        mask = np.zeros_like(first)
        for e in range(small_graph.n_entities):
            mask[e, small_graph.seen_desc[e]] = 1
        assert (both <= mask).all()

    def test_block_structure_follows_classes(self, small_graph):
        # the seen mask itself is block diagonal along class boundaries
        mask = np.zeros((small_graph.n_entities, small_graph.n_desc_props), dtype=int)
        for e in range(small_graph.n_entities):
            mask[e, small_graph.seen_desc[e]] = 1
        ent_per = small_graph.n_entities // small_graph.n_classes
        desc_per = small_graph.n_desc_props // small_graph.n_classes
        for ci in range(small_graph.n_classes):
            for cj in range(small_graph.n_classes):
                block = mask[ci * ent_per : (ci + 1) * ent_per, cj * desc_per : (cj + 1) * desc_per]
                assert (block.sum() > 0) == (ci == cj)


class TestSerialization:
    def test_round_trip(self, small_graph, tmp_path):
        path = tmp_path / "graph.npz"
        save_typegraph(small_graph, path)
        loaded = load_typegraph(path)
        assert loaded.params == small_graph.params
        assert np.array_equal(loaded.seen_desc, small_graph.seen_desc)
        assert np.array_equal(loaded.verb_edge_dir, small_graph.verb_edge_dir)
        assert loaded.seen_subjects(0) == small_graph.seen_subjects(0)

    def test_summary_mentions_counts(self, small_graph):
        text = summarize_typegraph(small_graph)
        assert "entities: 30" in text
        assert "seed: 7" in text


def _grammar():
    from perclang.grammar import default_grammar

    return default_grammar()
