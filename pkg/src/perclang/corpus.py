"""Token-level corpus generation on top of the grammar and type graph.

A sampled symbolic sentence is populated with vocabulary tokens while
respecting the type constraints: verbs are filled first, subjects and objects
come from the verbs' direction-correct seen sets, descriptors from the seen
sets of the subjects they predicate, and function words uniformly. Populated
sentences are wrapped into task examples (free generation, unscrambling,
conditional generation) and streamed in deterministic batches.

Every entity has two surface forms, ``subj<i>`` and ``obj<i>``, because each
vocabulary token carries exactly one grammatical role while the same entity
may act or be acted upon depending on the verb's direction tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .grammar import GrammarSpec, ParseTree, Role, SymbolicSentence, sample_symbolic, tree_leaves
from .typegraph import TypeGraph, TypedToken
from .rng import derive

__all__ = [
    "EOS", "FREE", "UNSCRAMBLE", "COND", "SEP",
    "TASKS", "DEFAULT_MIX", "DEFAULT_BATCH_SIZE",
    "Vocabulary", "Sentence", "TaskExample", "StreamConfig",
    "UnsatisfiableError", "MalformedRecordError",
    "build_vocabulary", "populate", "make_example", "sample_stream",
    "sentence_stream", "perturb",
    "write_examples", "read_examples", "write_vocabulary", "read_vocabulary",
    "write_stream_config", "read_stream_config",
]

EOS = "<eos>"
FREE = "<free>"
UNSCRAMBLE = "<unscramble>"
COND = "<cond>"
SEP = "<sep>"
SPECIALS = (EOS, FREE, UNSCRAMBLE, COND, SEP)

TASKS = ("free", "unscramble", "conditional")
TASK_MARKER = {"free": FREE, "unscramble": UNSCRAMBLE, "conditional": COND}
DEFAULT_MIX = (0.8, 0.1, 0.1)
DEFAULT_BATCH_SIZE = 128

N_LVERBS = 2
N_EADJ = 10
N_DADJ = 10
N_ADVERBS = 20
N_PREPS = 3
N_CONJS = 2

_LVERB_WORDS = ("is", "has")
_PREP_WORDS = ("in", "to", "on")
_CONJ_WORDS = ("and", "or")

RESAMPLE_LIMIT = 100


class UnsatisfiableError(RuntimeError):
    """Constraint intersection stayed empty after the resample budget."""


class MalformedRecordError(ValueError):
    """A serialized record failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Vocabulary:
    """Dense token-id space with per-token role and entity/property reference."""

    tokens: tuple[str, ...]
    roles: tuple[Role | None, ...]
    refs: tuple[int | None, ...]
    _ids: dict[str, int] = field(repr=False, default_factory=dict)
    _role_pools: dict[Role, tuple[int, ...]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})
        pools: dict[Role, list[int]] = {}
        for i, r in enumerate(self.roles):
            if r is not None:
                pools.setdefault(r, []).append(i)
        object.__setattr__(self, "_role_pools", {r: tuple(v) for r, v in pools.items()})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def role_of(self, token_id: int) -> Role | None:
        return self.roles[token_id]

    def ref_of(self, token_id: int) -> int | None:
        return self.refs[token_id]

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)

    def ids_for_role(self, role: Role) -> tuple[int, ...]:
        return self._role_pools.get(role, ())

    def typed(self, ids: Sequence[int]) -> tuple[TypedToken, ...]:
        out = []
        for i in ids:
            role = self.roles[i]
            if role is None:
                raise ValueError(f"token {self.tokens[i]!r} has no grammatical role")
            out.append(TypedToken(role, self.refs[i]))
        return tuple(out)


def build_vocabulary(graph: TypeGraph) -> Vocabulary:
    """Vocabulary for a graph's entity/property counts plus fixed function words."""
    tokens: list[str] = list(SPECIALS)
    roles: list[Role | None] = [None] * len(SPECIALS)
    refs: list[int | None] = [None] * len(SPECIALS)

    def add(strings: Iterable[str], role: Role, with_ref: bool = True) -> None:
        for i, s in enumerate(strings):
            tokens.append(s)
            roles.append(role)
            refs.append(i if with_ref else None)

    add((f"subj{i}" for i in range(graph.n_entities)), Role.SUBJ)
    add((f"obj{i}" for i in range(graph.n_entities)), Role.OBJ)
    add((f"descriptor{i}" for i in range(graph.n_desc_props)), Role.DESC)
    add((f"verb{i}" for i in range(graph.n_verbs)), Role.VERB)
    add(_LVERB_WORDS, Role.LVERB, with_ref=False)
    add((f"eAdj{i}" for i in range(N_EADJ)), Role.EADJ, with_ref=False)
    add((f"pAdj{i}" for i in range(N_DADJ)), Role.DADJ, with_ref=False)
    add((f"adv{i}" for i in range(N_ADVERBS)), Role.ADV, with_ref=False)
    add(_PREP_WORDS, Role.PREP, with_ref=False)
    add(_CONJ_WORDS, Role.CONJ, with_ref=False)
    return Vocabulary(tuple(tokens), tuple(roles), tuple(refs))


@dataclass(frozen=True)
class Sentence:
    token_ids: tuple[int, ...]
    roles: tuple[Role, ...]
    tree: ParseTree


@dataclass(frozen=True)
class TaskExample:
    task: str  # one of TASKS
    input: tuple[int, ...]
    target: tuple[int, ...]  # sentence tokens + EOS

    def model_stream(self, vocab: Vocabulary) -> tuple[int, ...]:
        """What an autoregressive model sees: input, separator, target."""
        return self.input + (vocab.id(SEP),) + self.target


# ---------------------------------------------------------------------------
# Population (symbolic sentence -> tokens)
# ---------------------------------------------------------------------------


def _vp_units(node: ParseTree) -> list[ParseTree]:
    """Flatten VP conjunctions into elementary verb/descriptor phrases."""
    if node.children and node.children[0].symbol == "VP":
        return _vp_units(node.children[0]) + _vp_units(node.children[2])
    return [node]


def populate(
    symbolic: SymbolicSentence,
    graph: TypeGraph,
    vocab: Vocabulary,
    rng: np.random.Generator,
    level: str = "seen",
) -> Sentence:
    """Fill a symbolic sentence with tokens under the type constraints.

    Verbs are sampled first; subjects must be subject-capable for every verb,
    objects object-capable for their own verb, and descriptors valid for all
    (possibly conjoined) subjects. ``level='class'`` ignores the seen
    subsample and samples any class-consistent token instead.
    """
    if level not in ("seen", "class"):
        raise ValueError(f"unknown level {level!r}")
    tree = symbolic.tree
    units = _vp_units(tree.children[1])
    verb_slots = [u for u in units if u.children[0].symbol == "vT"]
    desc_slots = [u for u in units if u.children[0].symbol is Role.LVERB]
    n_subjects = sum(1 for r in symbolic.roles if r is Role.SUBJ)

    for _ in range(RESAMPLE_LIMIT):
        cls = int(rng.integers(graph.n_classes))
        # Verbs first: all verbs in a sentence predicate the same subjects, so
        # they share one class and must admit a common subject pool. Verbs
        # after the first are drawn only among those keeping the pool
        # nonempty (repeating a verb always qualifies, so this terminates).
        verbs: list[int] = []
        if verb_slots:
            pool: set[int] | None = None
            for _slot in verb_slots:
                if level == "class":
                    candidates = list(graph.class_verbs(cls))
                elif pool is None:
                    candidates = [v for v in graph.class_verbs(cls) if graph.seen_subjects(v)]
                else:
                    candidates = [v for v in graph.class_verbs(cls) if graph.seen_subjects(v) & pool]
                if not candidates:
                    break
                v = int(candidates[rng.integers(len(candidates))])
                verbs.append(v)
                if level == "seen":
                    pool = set(graph.seen_subjects(v)) if pool is None else pool & graph.seen_subjects(v)
            if len(verbs) < len(verb_slots):
                continue
            subject_pool = sorted(pool) if level == "seen" else list(graph.class_entities(cls))
        else:
            subject_pool = list(graph.class_entities(cls))

        # Subjects: when a descriptor must predicate all of them, condition
        # each draw on keeping a common seen descriptor available.
        subjects: list[int] = []
        common: set[int] | None = None
        constrain_desc = bool(desc_slots) and level == "seen"
        for _j in range(max(1, n_subjects)):
            if constrain_desc and common is not None:
                candidates = [e for e in subject_pool if graph.seen_descriptors(e) & common]
            else:
                candidates = subject_pool
            if not candidates:
                break
            e = int(candidates[rng.integers(len(candidates))])
            subjects.append(e)
            if constrain_desc:
                common = set(graph.seen_descriptors(e)) if common is None else common & graph.seen_descriptors(e)
        if len(subjects) < max(1, n_subjects):
            continue

        if desc_slots:
            desc_pool = sorted(common) if constrain_desc else list(graph.class_descriptors(cls))
            if not desc_pool:
                continue
            descriptors = [int(desc_pool[rng.integers(len(desc_pool))]) for _ in desc_slots]
        else:
            descriptors = []

        objects: list[int] = []
        ok = True
        for u, v in zip(verb_slots, verbs):
            n_obj = sum(1 for r in tree_leaves(u) if r is Role.OBJ)
            opool = sorted(graph.seen_objects(v)) if level == "seen" else list(graph.class_entities(cls))
            if not opool:
                ok = False
                break
            objects.extend(int(opool[rng.integers(len(opool))]) for _ in range(n_obj))
        if not ok:
            continue

        return _emit(symbolic, vocab, rng, subjects, objects, verbs, descriptors)
    raise UnsatisfiableError(
        f"no satisfying assignment after {RESAMPLE_LIMIT} resamples (degenerate graph?)"
    )


def _emit(
    symbolic: SymbolicSentence,
    vocab: Vocabulary,
    rng: np.random.Generator,
    subjects: list[int],
    objects: list[int],
    verbs: list[int],
    descriptors: list[int],
) -> Sentence:
    """Lay out chosen ids in leaf order; function words are uniform draws."""
    subj_base = vocab.id("subj0")
    obj_base = vocab.id("obj0")
    desc_base = vocab.id("descriptor0")
    verb_base = vocab.id("verb0")
    uniform_pools = {
        Role.LVERB: vocab.ids_for_role(Role.LVERB),
        Role.EADJ: vocab.ids_for_role(Role.EADJ),
        Role.DADJ: vocab.ids_for_role(Role.DADJ),
        Role.ADV: vocab.ids_for_role(Role.ADV),
        Role.PREP: vocab.ids_for_role(Role.PREP),
        Role.CONJ: vocab.ids_for_role(Role.CONJ),
    }
    iters = {
        Role.SUBJ: iter(subjects),
        Role.OBJ: iter(objects),
        Role.VERB: iter(verbs),
        Role.DESC: iter(descriptors),
    }
    ids: list[int] = []
    for role in symbolic.roles:
        if role in iters:
            ref = next(iters[role])
            base = {Role.SUBJ: subj_base, Role.OBJ: obj_base, Role.VERB: verb_base, Role.DESC: desc_base}[role]
            ids.append(base + ref)
        else:
            pool = uniform_pools[role]
            ids.append(int(pool[rng.integers(len(pool))]))
    return Sentence(tuple(ids), symbolic.roles, symbolic.tree)


# ---------------------------------------------------------------------------
# Task examples
# ---------------------------------------------------------------------------


def make_example(
    sentence: Sentence, task: str, vocab: Vocabulary, rng: np.random.Generator
) -> TaskExample:
    """Wrap a sentence as a task example; target is always sentence + EOS."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    target = sentence.token_ids + (vocab.id(EOS),)
    marker = vocab.id(TASK_MARKER[task])
    if task == "free":
        return TaskExample(task, (marker,), target)
    if task == "unscramble":
        body = sentence.token_ids
        for _ in range(1000):
            perm = rng.permutation(len(body))
            shuffled = tuple(body[i] for i in perm)
            if shuffled != body:
                return TaskExample(task, (marker,) + shuffled, target)
        raise RuntimeError("could not find a non-identity permutation")
    content = sorted({t for t, r in zip(sentence.token_ids, sentence.roles)
                      if r in (Role.SUBJ, Role.OBJ, Role.VERB, Role.DESC)})
    size = int(rng.integers(1, len(content) + 1))
    picked = rng.choice(len(content), size=size, replace=False)
    chosen = [content[i] for i in picked]
    order = rng.permutation(size)
    return TaskExample(task, (marker,) + tuple(chosen[i] for i in order), target)


def sentence_stream(
    graph: TypeGraph,
    grammar: GrammarSpec,
    vocab: Vocabulary,
    seed: int,
    start_index: int = 0,
    level: str = "seen",
) -> Iterator[Sentence]:
    """Infinite deterministic sentence stream; item i depends only on (seed, i)."""
    index = start_index
    while True:
        rng = derive(seed, 1, index)
        symbolic = sample_symbolic(grammar, rng)
        yield populate(symbolic, graph, vocab, rng, level=level)
        index += 1


def sample_stream(
    graph: TypeGraph,
    grammar: GrammarSpec,
    vocab: Vocabulary,
    mix: tuple[float, float, float] = DEFAULT_MIX,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    start_batch: int = 0,
) -> Iterator[list[TaskExample]]:
    """Deterministic batches of task examples.

    Batch ``b`` is a pure function of (seed, b): every example derives its own
    generator from (seed, batch index, example index), so batches can be
    produced on any worker in any order.
    """
    if abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError(f"task mix {mix} does not sum to 1")
    edges = np.cumsum(mix)
    b = start_batch
    while True:
        batch: list[TaskExample] = []
        for i in range(batch_size):
            rng = derive(seed, 2, b, i)
            task = TASKS[int(np.searchsorted(edges, rng.random(), side="right"))]
            symbolic = sample_symbolic(grammar, rng)
            sentence = populate(symbolic, graph, vocab, rng)
            batch.append(make_example(sentence, task, vocab, rng))
        yield batch
        b += 1


# ---------------------------------------------------------------------------
# Perturbations (negative controls)
# ---------------------------------------------------------------------------


def perturb(
    sentence: Sentence,
    mode: str,
    graph: TypeGraph,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> Sentence:
    """Break exactly one structure of a valid sentence.

    ``randomize_values`` keeps the role sequence (hence grammar) but swaps a
    content token across classes so type checks fail. ``randomize_grammar``
    permutes the tokens until the role sequence is no longer derivable; the
    token multiset is preserved.
    """
    from .grammar import recognize  # local import to avoid cycle at module load

    if mode == "randomize_values":
        roles = sentence.roles
        candidates = [i for i, r in enumerate(roles) if r is Role.DESC]
        swap_desc = bool(candidates)
        if not swap_desc:
            candidates = [i for i, r in enumerate(roles) if r in (Role.SUBJ, Role.OBJ)]
        pos = int(candidates[rng.integers(len(candidates))])
        old_ref = vocab.ref_of(sentence.token_ids[pos])
        if swap_desc:
            subj_ref = next(vocab.ref_of(t) for t, r in zip(sentence.token_ids, roles) if r is Role.SUBJ)
            avoid_cls = graph.entity_class(subj_ref)
            per = graph.n_desc_props // graph.n_classes
            new_cls = int((avoid_cls + 1 + rng.integers(graph.n_classes - 1)) % graph.n_classes)
            new_ref = int(rng.integers(per)) + new_cls * per
            base = vocab.id("descriptor0")
        else:
            avoid_cls = graph.entity_class(old_ref)
            per = graph.n_entities // graph.n_classes
            new_cls = int((avoid_cls + 1 + rng.integers(graph.n_classes - 1)) % graph.n_classes)
            new_ref = int(rng.integers(per)) + new_cls * per
            base = vocab.id("subj0") if roles[pos] is Role.SUBJ else vocab.id("obj0")
        ids = list(sentence.token_ids)
        ids[pos] = base + new_ref
        return Sentence(tuple(ids), roles, sentence.tree)

    if mode == "randomize_grammar":
        from .grammar import default_grammar  # the role alphabet's grammar

        grammar = default_grammar()
        for _ in range(1000):
            perm = rng.permutation(len(sentence.token_ids))
            roles = tuple(sentence.roles[i] for i in perm)
            if recognize(grammar, roles) is None:
                ids = tuple(sentence.token_ids[i] for i in perm)
                return Sentence(ids, roles, sentence.tree)
        raise RuntimeError("no ungrammatical permutation found within the resample budget")

    raise ValueError(f"unknown perturbation mode {mode!r}")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

CORPUS_SCHEMA = "perclang/corpus/v1"


def write_examples(path, examples: Iterable[TaskExample], vocab: Vocabulary) -> None:
    """JSONL, one record per example, token strings; header carries the schema."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": CORPUS_SCHEMA}) + "\n")
        for ex in examples:
            rec = {
                "task": ex.task,
                "input": list(vocab.decode(ex.input)),
                "target": list(vocab.decode(ex.target)),
            }
            fh.write(json.dumps(rec) + "\n")


def read_examples(path, vocab: Vocabulary) -> list[TaskExample]:
    out: list[TaskExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as ex:
                raise MalformedRecordError(lineno, str(ex)) from None
            if lineno == 1 and "schema" in rec:
                if rec["schema"] != CORPUS_SCHEMA:
                    raise MalformedRecordError(lineno, f"unexpected schema {rec['schema']!r}")
                continue
            try:
                out.append(
                    TaskExample(rec["task"], vocab.encode(rec["input"]), vocab.encode(rec["target"]))
                )
            except (KeyError, TypeError) as ex:
                raise MalformedRecordError(lineno, f"bad record: {ex}") from None
    return out


def write_vocabulary(path, vocab: Vocabulary) -> None:
    """Plain text, one token per line, line number = token id."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.tokens:
            fh.write(token + "\n")


def read_vocabulary(path, graph: TypeGraph) -> Vocabulary:
    """Read a token list and check it matches the graph's canonical vocabulary."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.strip()]
    vocab = build_vocabulary(graph)
    if list(vocab.tokens) != tokens:
        raise ValueError("vocabulary file does not match the graph's token inventory")
    return vocab


@dataclass(frozen=True)
class StreamConfig:
    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE
    mix: tuple[float, float, float] = DEFAULT_MIX
    graph_path: str = ""


def write_stream_config(path, config: StreamConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"seed={config.seed}\n")
        fh.write(f"batch_size={config.batch_size}\n")
        fh.write(f"mix={','.join(str(m) for m in config.mix)}\n")
        fh.write(f"graph={config.graph_path}\n")


def read_stream_config(path) -> StreamConfig:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
    mix = tuple(float(x) for x in values.get("mix", "0.8,0.1,0.1").split(","))
    if len(mix) != 3:
        raise ValueError("mix must have three components")
    return StreamConfig(
        seed=int(values.get("seed", "0")),
        batch_size=int(values.get("batch_size", str(DEFAULT_BATCH_SIZE))),
        mix=mix,  # type: ignore[arg-type]
        graph_path=values.get("graph", ""),
    )
