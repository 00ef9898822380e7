"""Type-constraints graph: which entities may carry which properties.

Entities and properties are split equally and disjointly across classes.
Descriptive properties (descriptors) and relative properties (verbs) hang off
the same class structure; a per-entity "seen" subsample of the class-valid
edges (default 15%) is what the corpus sampler actually draws from, while
validity checks run at class level. Relative edges carry a direction tag
saying whether the entity may act (subject), be acted on (object), or both.

The graph is immutable after build; all queries are read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Literal, Sequence

import numpy as np

from . import grammar as gr
from .grammar import GrammarSpec, ParseTree, Role
from .rng import derive

__all__ = [
    "TypeGraphParams",
    "TypeGraph",
    "Direction",
    "TypedToken",
    "TypeCheckResult",
    "InvalidParamsError",
    "UnknownIdError",
    "KindMismatchError",
    "UnparsableSentenceError",
    "build_typegraph",
    "query_valid",
    "type_check",
    "check_bindings",
    "extract_bindings",
    "Bindings",
    "empirical_adjacency",
    "save_typegraph",
    "load_typegraph",
    "summarize_typegraph",
    "adjacency_to_csv",
]


class InvalidParamsError(ValueError):
    """Graph parameters violate a divisibility or range constraint."""


class UnknownIdError(KeyError):
    """Anchor id does not exist in the graph."""


class KindMismatchError(ValueError):
    """Query kind is incompatible with the anchor's node type."""


class UnparsableSentenceError(ValueError):
    """Role sequence is ungrammatical, so entity/property pairings are undefined."""


class Direction(Enum):
    SUBJECT = "subject"
    OBJECT = "object"
    BOTH = "both"

    @property
    def subject_capable(self) -> bool:
        return self is not Direction.OBJECT

    @property
    def object_capable(self) -> bool:
        return self is not Direction.SUBJECT


@dataclass(frozen=True)
class TypeGraphParams:
    n_entities: int = 900
    n_desc_props: int = 18000
    n_classes: int = 10
    n_verbs: int = 200
    edge_fraction: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_entities, self.n_desc_props, self.n_classes, self.n_verbs) < 1:
            raise InvalidParamsError("counts must be positive")
        for name in ("n_entities", "n_desc_props", "n_verbs"):
            value = getattr(self, name)
            if value % self.n_classes:
                raise InvalidParamsError(
                    f"{name}={value} not divisible by n_classes={self.n_classes}"
                )
        if not 0.0 < self.edge_fraction <= 1.0:
            raise InvalidParamsError("edge_fraction must be in (0, 1]")


def _round_half_up(x: float) -> int:
    # Deterministic across platforms, unlike banker's rounding.
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class TypeGraph:
    """Immutable class-structured bipartite graph with a seen-edge subsample."""

    params: TypeGraphParams
    # seen descriptive edges: (n_entities, per-entity count), descriptor ids
    seen_desc: np.ndarray
    # seen relative edges, COO-style, with per-edge direction tags
    verb_edge_entity: np.ndarray
    verb_edge_verb: np.ndarray
    verb_edge_dir: np.ndarray  # values index DIRECTION_ORDER
    _desc_sets: tuple[frozenset[int], ...] = field(repr=False, default=())
    _verb_subj: tuple[frozenset[int], ...] = field(repr=False, default=())
    _verb_obj: tuple[frozenset[int], ...] = field(repr=False, default=())

    @property
    def n_entities(self) -> int:
        return self.params.n_entities

    @property
    def n_desc_props(self) -> int:
        return self.params.n_desc_props

    @property
    def n_verbs(self) -> int:
        return self.params.n_verbs

    @property
    def n_classes(self) -> int:
        return self.params.n_classes

    def entity_class(self, entity: int) -> int:
        self._check_id(entity, self.n_entities, "entity")
        return entity // (self.n_entities // self.n_classes)

    def desc_class(self, desc: int) -> int:
        self._check_id(desc, self.n_desc_props, "descriptor")
        return desc // (self.n_desc_props // self.n_classes)

    def verb_class(self, verb: int) -> int:
        self._check_id(verb, self.n_verbs, "verb")
        return verb // (self.n_verbs // self.n_classes)

    @staticmethod
    def _check_id(value: int, bound: int, kind: str) -> None:
        if not 0 <= value < bound:
            raise UnknownIdError(f"{kind} id {value} out of range [0, {bound})")

    def seen_descriptors(self, entity: int) -> frozenset[int]:
        self._check_id(entity, self.n_entities, "entity")
        return self._desc_sets[entity]

    def seen_subjects(self, verb: int) -> frozenset[int]:
        self._check_id(verb, self.n_verbs, "verb")
        return self._verb_subj[verb]

    def seen_objects(self, verb: int) -> frozenset[int]:
        self._check_id(verb, self.n_verbs, "verb")
        return self._verb_obj[verb]

    def class_entities(self, cls: int) -> range:
        per = self.n_entities // self.n_classes
        return range(cls * per, (cls + 1) * per)

    def class_descriptors(self, cls: int) -> range:
        per = self.n_desc_props // self.n_classes
        return range(cls * per, (cls + 1) * per)

    def class_verbs(self, cls: int) -> range:
        per = self.n_verbs // self.n_classes
        return range(cls * per, (cls + 1) * per)


DIRECTION_ORDER = (Direction.SUBJECT, Direction.OBJECT, Direction.BOTH)


def build_typegraph(params: TypeGraphParams) -> TypeGraph:
    """Build the graph deterministically from ``params.seed``.

    Per entity: ``round(edge_fraction x per-class descriptor count)`` seen
    descriptors sampled without replacement within its class, and
    ``round(edge_fraction x per-class verb count)`` seen verbs, each tagged
    subject/object/both (independent coin flips, redrawn if neither). If a
    verb ends up with no subject-capable or no object-capable entity, repair
    edges are appended (tagged both) so every verb is usable in a sentence.
    """
    params.validate()
    ent_per = params.n_entities // params.n_classes
    desc_per = params.n_desc_props // params.n_classes
    verb_per = params.n_verbs // params.n_classes
    n_desc_edges = _round_half_up(params.edge_fraction * desc_per)
    n_verb_edges = min(verb_per, max(1, _round_half_up(params.edge_fraction * verb_per)))

    rng = derive(params.seed, 0)
    seen_desc = np.empty((params.n_entities, n_desc_edges), dtype=np.int64)
    ve_entity: list[int] = []
    ve_verb: list[int] = []
    ve_dir: list[int] = []
    for e in range(params.n_entities):
        cls = e // ent_per
        seen_desc[e] = np.sort(
            rng.choice(desc_per, size=n_desc_edges, replace=False) + cls * desc_per
        )
        verbs = rng.choice(verb_per, size=n_verb_edges, replace=False) + cls * verb_per
        for v in np.sort(verbs):
            while True:
                subj, obj = rng.random() < 0.5, rng.random() < 0.5
                if subj or obj:
                    break
            d = Direction.BOTH if subj and obj else (Direction.SUBJECT if subj else Direction.OBJECT)
            ve_entity.append(e)
            ve_verb.append(int(v))
            ve_dir.append(DIRECTION_ORDER.index(d))

    # Coverage repair: every verb needs >=1 subject-capable and >=1
    # object-capable entity or it could never be placed in a sentence.
    subj_cov = np.zeros(params.n_verbs, dtype=bool)
    obj_cov = np.zeros(params.n_verbs, dtype=bool)
    for v, d in zip(ve_verb, ve_dir):
        direction = DIRECTION_ORDER[d]
        subj_cov[v] |= direction.subject_capable
        obj_cov[v] |= direction.object_capable
    for v in range(params.n_verbs):
        if not (subj_cov[v] and obj_cov[v]):
            cls = v // verb_per
            e = int(rng.integers(cls * ent_per, (cls + 1) * ent_per))
            ve_entity.append(e)
            ve_verb.append(v)
            ve_dir.append(DIRECTION_ORDER.index(Direction.BOTH))

    graph = TypeGraph(
        params=params,
        seen_desc=seen_desc,
        verb_edge_entity=np.asarray(ve_entity, dtype=np.int64),
        verb_edge_verb=np.asarray(ve_verb, dtype=np.int64),
        verb_edge_dir=np.asarray(ve_dir, dtype=np.int64),
    )
    return _with_indexes(graph)


def _with_indexes(graph: TypeGraph) -> TypeGraph:
    """Attach derived lookup sets (kept off the serialized surface)."""
    desc_sets = tuple(frozenset(int(k) for k in row) for row in graph.seen_desc)
    subj: list[set[int]] = [set() for _ in range(graph.n_verbs)]
    obj: list[set[int]] = [set() for _ in range(graph.n_verbs)]
    for e, v, d in zip(graph.verb_edge_entity, graph.verb_edge_verb, graph.verb_edge_dir):
        direction = DIRECTION_ORDER[int(d)]
        if direction.subject_capable:
            subj[int(v)].add(int(e))
        if direction.object_capable:
            obj[int(v)].add(int(e))
    object.__setattr__(graph, "_desc_sets", desc_sets)
    object.__setattr__(graph, "_verb_subj", tuple(frozenset(s) for s in subj))
    object.__setattr__(graph, "_verb_obj", tuple(frozenset(s) for s in obj))
    return graph


AnchorKind = Literal["entity", "descriptor", "verb"]
QueryKind = Literal["descriptors", "subjects", "objects"]
Level = Literal["seen", "class"]


def query_valid(
    graph: TypeGraph,
    anchor: tuple[AnchorKind, int],
    kind: QueryKind,
    level: Level = "class",
) -> frozenset[int]:
    """Valid partner ids for an anchor node.

    ``level='class'`` returns every same-class candidate (direction filters
    apply only to the seen subsample); ``level='seen'`` returns the
    subsampled set actually used when generating sentences.
    """
    anchor_kind, anchor_id = anchor
    if level not in ("seen", "class"):
        raise ValueError(f"unknown level {level!r}")
    if kind == "descriptors":
        if anchor_kind != "entity":
            raise KindMismatchError(f"kind='descriptors' needs an entity anchor, got {anchor_kind}")
        cls = graph.entity_class(anchor_id)
        if level == "seen":
            return graph.seen_descriptors(anchor_id)
        return frozenset(graph.class_descriptors(cls))
    if kind in ("subjects", "objects"):
        if anchor_kind != "verb":
            raise KindMismatchError(f"kind={kind!r} needs a verb anchor, got {anchor_kind}")
        cls = graph.verb_class(anchor_id)
        if level == "class":
            return frozenset(graph.class_entities(cls))
        return graph.seen_subjects(anchor_id) if kind == "subjects" else graph.seen_objects(anchor_id)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# Type checking of role-annotated token sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypedToken:
    """A surface token reduced to what type-checking needs.

    ``ref`` is the entity id for Subj/Obj, the descriptor id for Desc, the
    verb id for Verb, and None for the function roles.
    """

    role: Role
    ref: int | None = None


@dataclass(frozen=True)
class TypeCheckResult:
    descriptive: bool
    relative: bool
    all_ok: bool

    def __iter__(self):
        return iter((self.descriptive, self.relative, self.all_ok))


@dataclass(frozen=True)
class Bindings:
    """Entity/property pairings implied by a parse.

    Descriptors predicate every subject of the sentence; each verb relates
    every subject to the objects inside its own prepositional phrase.
    """

    subjects: tuple[int, ...]
    descriptor_pairs: tuple[tuple[int, int], ...]  # (subject entity, descriptor)
    relative_triples: tuple[tuple[int, int, int], ...]  # (subject, verb, object)
    adjective_ok: bool


def extract_bindings(
    grammar: GrammarSpec, typed: Sequence[TypedToken], tree: ParseTree | None = None
) -> Bindings:
    """Parse the role sequence and read off the implied pairings.

    Pass ``tree`` to skip re-parsing when the derivation is already known
    (e.g. for freshly sampled sentences); pairings are bracketing-invariant,
    so any valid parse yields the same bindings.
    """
    roles = [t.role for t in typed]
    if tree is None:
        tree = gr.recognize(grammar, roles)
    if tree is None:
        raise UnparsableSentenceError("role sequence is not in the language")

    leaves: list[ParseTree] = []

    def order(node: ParseTree) -> None:
        if node.is_leaf:
            leaves.append(node)
        for ch in node.children:
            order(node=ch)

    order(tree)
    pos_of = {id(leaf): i for i, leaf in enumerate(leaves)}

    subjects: list[int] = []
    desc_ids: list[int] = []
    verb_groups: list[tuple[int, list[int]]] = []  # (verb id, object ids)
    adjective_ok = True

    def leaf_ref(node: ParseTree) -> int:
        ref = typed[pos_of[id(node)]].ref
        if ref is None:
            raise UnparsableSentenceError(f"{node.symbol} token lacks an entity/property id")
        return ref

    def collect_role(node: ParseTree, role: Role, out: list[int]) -> None:
        if node.is_leaf:
            if node.symbol is role:
                out.append(leaf_ref(node))
            return
        for ch in node.children:
            collect_role(ch, role, out)

    def walk_vp(node: ParseTree) -> None:
        syms = [ch.symbol for ch in node.children]
        if syms and syms[0] == "VP":  # VP Conj VP
            walk_vp(node.children[0])
            walk_vp(node.children[2])
        elif syms and syms[0] is Role.LVERB:  # lVerb descT
            collect_role(node.children[1], Role.DESC, desc_ids)
        else:  # vT Prep oNP
            verbs: list[int] = []
            collect_role(node.children[0], Role.VERB, verbs)
            objs: list[int] = []
            collect_role(node.children[2], Role.OBJ, objs)
            verb_groups.append((verbs[0], objs))

    assert tree.symbol == grammar.start
    collect_role(tree.children[0], Role.SUBJ, subjects)
    walk_vp(tree.children[1])

    # Adjective placement: eAdj must precede an entity, dAdj a descriptor.
    for i, t in enumerate(typed):
        if t.role is Role.EADJ:
            adjective_ok &= i + 1 < len(typed) and typed[i + 1].role in (Role.SUBJ, Role.OBJ)
        elif t.role is Role.DADJ:
            adjective_ok &= i + 1 < len(typed) and typed[i + 1].role is Role.DESC

    pairs = tuple((s, k) for k in desc_ids for s in subjects)
    triples = tuple((s, v, o) for v, objs in verb_groups for s in subjects for o in objs)
    return Bindings(tuple(subjects), pairs, triples, adjective_ok)


def check_bindings(graph: TypeGraph, b: Bindings) -> TypeCheckResult:
    """Class-level validity of already-extracted pairings.

    A sentence with no pairings of a kind passes that check vacuously; see
    ``evaluation.score_generations`` for aggregation that restricts each
    decomposed metric to sentences where the pairing exists.
    """
    descriptive = all(
        graph.entity_class(s) == graph.desc_class(k) for s, k in b.descriptor_pairs
    )
    relative = all(
        graph.entity_class(s) == graph.verb_class(v) == graph.entity_class(o)
        for s, v, o in b.relative_triples
    )
    return TypeCheckResult(descriptive, relative, descriptive and relative and b.adjective_ok)


def type_check(
    graph: TypeGraph, grammar: GrammarSpec, typed: Sequence[TypedToken]
) -> TypeCheckResult:
    """Class-level validity of all pairings implied by the parse.

    Descriptive: every (entity, descriptor) pairing is class-consistent.
    Relative: every (subject, verb, object) triple is class-consistent.
    ``all_ok`` additionally requires correct adjective placement. Validity is
    judged at class level, not against the seen subsample.
    """
    return check_bindings(graph, extract_bindings(grammar, typed))


def empirical_adjacency(
    graph: TypeGraph,
    bindings_stream: Iterable[Bindings],
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Accumulate observed (entity, descriptor) pairings into a binary matrix.

    Pass ``out`` to keep accumulating into an existing buffer (single writer);
    entries only ever flip 0 -> 1, so the matrix is monotone in the stream.
    """
    if out is None:
        out = np.zeros((graph.n_entities, graph.n_desc_props), dtype=np.uint8)
    for b in bindings_stream:
        for e, k in b.descriptor_pairs:
            out[e, k] = 1
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FORMAT_VERSION = 1


def save_typegraph(graph: TypeGraph, path) -> None:
    """Versioned binary file (npz container)."""
    np.savez_compressed(
        path,
        format_version=np.int64(_FORMAT_VERSION),
        params=np.frombuffer(
            json.dumps(graph.params.__dict__).encode("utf-8"), dtype=np.uint8
        ),
        seen_desc=graph.seen_desc,
        verb_edge_entity=graph.verb_edge_entity,
        verb_edge_verb=graph.verb_edge_verb,
        verb_edge_dir=graph.verb_edge_dir,
    )


def load_typegraph(path) -> TypeGraph:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported typegraph file version {version}")
        params = TypeGraphParams(**json.loads(bytes(data["params"]).decode("utf-8")))
        graph = TypeGraph(
            params=params,
            seen_desc=data["seen_desc"],
            verb_edge_entity=data["verb_edge_entity"],
            verb_edge_verb=data["verb_edge_verb"],
            verb_edge_dir=data["verb_edge_dir"],
        )
    return _with_indexes(graph)


def summarize_typegraph(graph: TypeGraph) -> str:
    """Human-readable companion summary for a saved graph."""
    p = graph.params
    dirs = [DIRECTION_ORDER[int(d)].value for d in graph.verb_edge_dir]
    lines = [
        "type graph summary",
        f"seed: {p.seed}",
        f"classes: {p.n_classes}",
        f"entities: {p.n_entities} ({p.n_entities // p.n_classes} per class)",
        f"descriptors: {p.n_desc_props} ({p.n_desc_props // p.n_classes} per class)",
        f"verbs: {p.n_verbs} ({p.n_verbs // p.n_classes} per class)",
        f"edge fraction: {p.edge_fraction}",
        f"seen descriptive edges: {graph.seen_desc.size} "
        f"({graph.seen_desc.shape[1]} per entity)",
        f"seen relative edges: {graph.verb_edge_verb.size} "
        f"(subject: {dirs.count('subject')}, object: {dirs.count('object')}, "
        f"both: {dirs.count('both')})",
    ]
    return "\n".join(lines) + "\n"


def adjacency_to_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, matrix, fmt="%d", delimiter=",")
