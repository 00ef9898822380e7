from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclang.corpus import (
    COND,
    DEFAULT_MIX,
    EOS,
    FREE,
    SEP,
    UNSCRAMBLE,
    MalformedRecordError,
    StreamConfig,
    TaskExample,
    build_vocabulary,
    make_example,
    perturb,
    populate,
    read_examples,
    read_stream_config,
    read_vocabulary,
    sample_stream,
    sentence_stream,
    write_examples,
    write_stream_config,
    write_vocabulary,
)
from perclang.grammar import Role, recognize, sample_symbolic
from perclang.typegraph import query_valid, type_check

R = Role


class TestVocabulary:
    def test_fixed_function_word_counts(self, default_vocab):
        by_role = Counter(r for r in default_vocab.roles if r is not None)
        assert by_role[R.VERB] == 200
        assert by_role[R.LVERB] == 2
        assert by_role[R.EADJ] + by_role[R.DADJ] == 20
        assert by_role[R.ADV] == 20
        assert by_role[R.PREP] == 3
        assert by_role[R.CONJ] == 2
        assert by_role[R.SUBJ] == by_role[R.OBJ] == 900

    def test_dense_bijection(self, default_vocab):
        assert len({*default_vocab.tokens}) == len(default_vocab)
        for i in (0, 5, len(default_vocab) - 1):
            assert default_vocab.id(default_vocab.token(i)) == i

    def test_specials_have_no_role(self, default_vocab):
        for tok in (EOS, FREE, UNSCRAMBLE, COND, SEP):
            assert default_vocab.role_of(default_vocab.id(tok)) is None


class TestPopulate:
    def test_every_output_valid(self, small_graph, small_vocab, grammar):
        rng = np.random.default_rng(2)
        for _ in range(500):
            sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
            assert recognize(grammar, sent.roles) is not None
            assert type_check(small_graph, grammar, small_vocab.typed(sent.token_ids)).all_ok

    def test_descriptors_come_from_seen_sets(self, small_graph, small_vocab, grammar):
        rng = np.random.default_rng(3)
        found = 0
        while found < 50:
            sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
            subjects = [
                small_vocab.ref_of(t) for t, r in zip(sent.token_ids, sent.roles) if r is R.SUBJ
            ]
            descs = [
                small_vocab.ref_of(t) for t, r in zip(sent.token_ids, sent.roles) if r is R.DESC
            ]
            for k in descs:
                found += 1
                for s in subjects:
                    assert k in query_valid(small_graph, ("entity", s), "descriptors", "seen")

    def test_verb_direction_constraints(self, small_graph, small_vocab, grammar):
        rng = np.random.default_rng(4)
        found = 0
        while found < 50:
            symbolic = sample_symbolic(grammar, rng)
            if R.VERB not in symbolic.roles:
                continue
            sent = populate(symbolic, small_graph, small_vocab, rng)
            subjects = {
                small_vocab.ref_of(t) for t, r in zip(sent.token_ids, sent.roles) if r is R.SUBJ
            }
            verbs = [
                small_vocab.ref_of(t) for t, r in zip(sent.token_ids, sent.roles) if r is R.VERB
            ]
            for v in verbs:
                found += 1
                subj_ok = query_valid(small_graph, ("verb", v), "subjects", "seen")
                assert subjects <= subj_ok

    def test_descriptive_pattern_matches_figure_style(self, small_graph, small_vocab, grammar):
        rng = np.random.default_rng(5)
        target = (R.EADJ, R.SUBJ, R.LVERB, R.DADJ, R.DESC)
        while True:
            symbolic = sample_symbolic(grammar, rng)
            if symbolic.roles == target:
                break
        sent = populate(symbolic, small_graph, small_vocab, rng)
        toks = small_vocab.decode(sent.token_ids)
        assert toks[0].startswith("eAdj")
        assert toks[1].startswith("subj")
        assert toks[2] in ("is", "has")
        assert toks[3].startswith("pAdj")
        assert toks[4].startswith("descriptor")

    def test_class_level_population(self, small_graph, small_vocab, grammar):
        # level='class' may pick pairs outside the seen mask but stays class-valid
        rng = np.random.default_rng(6)
        unseen = 0
        for _ in range(300):
            sent = populate(
                sample_symbolic(grammar, rng), small_graph, small_vocab, rng, level="class"
            )
            assert type_check(small_graph, grammar, small_vocab.typed(sent.token_ids)).all_ok
            subjects = [
                small_vocab.ref_of(t) for t, r in zip(sent.token_ids, sent.roles) if r is R.SUBJ
            ]
            for t, r in zip(sent.token_ids, sent.roles):
                if r is R.DESC:
                    k = small_vocab.ref_of(t)
                    if any(
                        k not in query_valid(small_graph, ("entity", s), "descriptors", "seen")
                        for s in subjects
                    ):
                        unseen += 1
        assert unseen > 0


class TestMakeExample:
    def test_free_generation_has_no_content(self, small_graph, small_vocab, grammar, rng):
        sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
        ex = make_example(sent, "free", small_vocab, rng)
        assert ex.input == (small_vocab.id(FREE),)
        assert ex.target == sent.token_ids + (small_vocab.id(EOS),)

    @given(seed=st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_unscramble_is_non_identity_permutation(
        self, small_graph, small_vocab, grammar, seed
    ):
        rng = np.random.default_rng(seed)
        sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
        ex = make_example(sent, "unscramble", small_vocab, rng)
        body = ex.input[1:]
        assert Counter(body) == Counter(sent.token_ids)
        assert body != sent.token_ids

    @given(seed=st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_conditional_subset_of_content(self, small_graph, small_vocab, grammar, seed):
        rng = np.random.default_rng(seed)
        sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
        ex = make_example(sent, "conditional", small_vocab, rng)
        content = {
            t
            for t, r in zip(sent.token_ids, sent.roles)
            if r in (R.SUBJ, R.OBJ, R.VERB, R.DESC)
        }
        assert ex.input[0] == small_vocab.id(COND)
        assert set(ex.input[1:]) <= content
        assert len(ex.input) > 1

    def test_model_stream_layout(self, small_graph, small_vocab, grammar, rng):
        sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
        ex = make_example(sent, "free", small_vocab, rng)
        stream = ex.model_stream(small_vocab)
        assert stream == ex.input + (small_vocab.id(SEP),) + ex.target


class TestStream:
    def test_batches_are_pure_functions_of_seed_and_index(
        self, small_graph, small_vocab, grammar
    ):
        s1 = sample_stream(small_graph, grammar, small_vocab, seed=42, batch_size=8)
        batches = [next(s1) for _ in range(3)]
        # regenerate batch 2 directly without consuming 0 and 1
        s2 = sample_stream(small_graph, grammar, small_vocab, seed=42, batch_size=8, start_batch=2)
        assert next(s2) == batches[2]

    def test_task_mix_concentration(self, small_graph, small_vocab, grammar):
        stream = sample_stream(small_graph, grammar, small_vocab, seed=7, batch_size=500)
        tasks = Counter(ex.task for _ in range(20) for ex in next(stream))
        total = sum(tasks.values())
        for task, frac in zip(("free", "unscramble", "conditional"), DEFAULT_MIX):
            assert abs(tasks[task] / total - frac) < 0.02

    def test_bad_mix_rejected(self, small_graph, small_vocab, grammar):
        with pytest.raises(ValueError):
            next(sample_stream(small_graph, grammar, small_vocab, mix=(0.5, 0.2, 0.2)))

    def test_sentence_stream_prefix_stability(self, small_graph, small_vocab, grammar):
        a = sentence_stream(small_graph, grammar, small_vocab, seed=9)
        b = sentence_stream(small_graph, grammar, small_vocab, seed=9)
        for _ in range(20):
            assert next(a).token_ids == next(b).token_ids


class TestCollisionRarity:
    def test_duplicate_sentences_vanishingly_rare_at_default_scale(
        self, default_graph, default_vocab, grammar
    ):
        # online-learning premise: repeated full sentences are negligible
        rng = np.random.default_rng(77)
        n = 100_000
        counts = Counter()
        for _ in range(n):
            sent = populate(sample_symbolic(grammar, rng), default_graph, default_vocab, rng)
            counts[sent.token_ids] += 1
        dup_pairs = sum(m * (m - 1) // 2 for m in counts.values())
        total_pairs = n * (n - 1) // 2
        assert dup_pairs / total_pairs < 0.01
        # far stricter in practice: a handful of duplicates out of 1e5
        assert n - len(counts) < 100


class TestPerturb:
    def test_randomize_values_keeps_grammar_breaks_types(
        self, small_graph, small_vocab, grammar
    ):
        rng = np.random.default_rng(11)
        for _ in range(200):
            sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
            bad = perturb(sent, "randomize_values", small_graph, small_vocab, rng)
            assert bad.roles == sent.roles
            assert recognize(grammar, bad.roles) is not None
            assert not type_check(small_graph, grammar, small_vocab.typed(bad.token_ids)).all_ok

    def test_randomize_grammar_keeps_tokens_breaks_parse(
        self, small_graph, small_vocab, grammar
    ):
        rng = np.random.default_rng(12)
        for _ in range(200):
            sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
            bad = perturb(sent, "randomize_grammar", small_graph, small_vocab, rng)
            assert Counter(bad.token_ids) == Counter(sent.token_ids)
            assert recognize(grammar, bad.roles) is None

    def test_unknown_mode(self, small_graph, small_vocab, grammar, rng):
        sent = populate(sample_symbolic(grammar, rng), small_graph, small_vocab, rng)
        with pytest.raises(ValueError):
            perturb(sent, "nonsense", small_graph, small_vocab, rng)


class TestIo:
    def test_examples_round_trip(self, small_graph, small_vocab, grammar, tmp_path):
        stream = sample_stream(small_graph, grammar, small_vocab, seed=1, batch_size=100)
        examples = next(stream) + next(stream)
        path = tmp_path / "corpus.jsonl"
        write_examples(path, examples, small_vocab)
        assert read_examples(path, small_vocab) == examples

    def test_first_record_serializes_task_name(self, small_graph, small_vocab, grammar, tmp_path):
        stream = sample_stream(small_graph, grammar, small_vocab, seed=1, batch_size=4)
        path = tmp_path / "corpus.jsonl"
        write_examples(path, next(stream), small_vocab)
        lines = path.read_text().splitlines()
        assert '"schema"' in lines[0]
        assert '"task"' in lines[1]

    def test_malformed_record_reports_line(self, small_vocab, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"schema": "perclang/corpus/v1"}\nnot json\n')
        with pytest.raises(MalformedRecordError, match="line 2"):
            read_examples(path, small_vocab)

    def test_vocabulary_file_line_count(self, small_graph, small_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        write_vocabulary(path, small_vocab)
        lines = path.read_text().splitlines()
        assert len(lines) == len(small_vocab)
        assert read_vocabulary(path, small_graph).tokens == small_vocab.tokens

    def test_stream_config_round_trip(self, tmp_path):
        cfg = StreamConfig(seed=5, batch_size=64, mix=(0.7, 0.2, 0.1), graph_path="g.npz")
        path = tmp_path / "stream.cfg"
        write_stream_config(path, cfg)
        assert read_stream_config(path) == cfg
