"""Probabilistic context-free grammar over part-of-speech roles.

Provides the built-in sentence grammar, a seeded sampler for symbolic
(role-level) sentences, a chart-based recognizer that returns a
maximum-probability parse, and the derivation-likelihood oracle (inside
algorithm, natural log).

Symbols are either nonterminal names (strings) or :class:`Role` members.
Internally the grammar is binarized for cubic-time chart parsing; callers
only ever see trees over the original rules.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Role",
    "ParseTree",
    "SymbolicSentence",
    "GrammarSpec",
    "GrammarError",
    "NotInLanguageError",
    "ResampleLimitError",
    "default_grammar",
    "parse_grammar_text",
    "load_grammar",
    "sample_symbolic",
    "recognize",
    "derivation_nll",
    "tree_stats",
    "tree_leaves",
]

PROB_TOL = 1e-9
RESAMPLE_LIMIT = 1000


class GrammarError(ValueError):
    """Invalid grammar definition."""


class NotInLanguageError(ValueError):
    """Role sequence is not derivable from the grammar."""


class ResampleLimitError(RuntimeError):
    """Sampler exceeded the consecutive-rejection budget (pathological grammar)."""


class Role(str, enum.Enum):
    """Part-of-speech terminal alphabet, plus the end-of-string marker."""

    SUBJ = "Subj"
    OBJ = "Obj"
    VERB = "Verb"
    CONJ = "Conj"
    LVERB = "lVerb"
    DESC = "Desc"
    EADJ = "eAdj"
    DADJ = "dAdj"
    ADV = "Adv"
    PREP = "Prep"
    EOS = "EOS"

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"Role.{self.name}"


#: Roles that may appear inside a sentence body (everything except EOS).
BODY_ROLES = tuple(r for r in Role if r is not Role.EOS)

Symbol = Union[str, Role]


@dataclass(frozen=True)
class ParseTree:
    """Derivation tree node; leaves carry a Role, internal nodes a nonterminal."""

    symbol: Symbol
    children: tuple["ParseTree", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class SymbolicSentence:
    """Role sequence together with the derivation that produced it."""

    roles: tuple[Role, ...]
    tree: ParseTree


@dataclass(frozen=True)
class GrammarSpec:
    """A PCFG: per-LHS weighted productions plus a sampled-length cap."""

    nonterminals: frozenset[str]
    start: str
    rules: tuple[tuple[str, tuple[Symbol, ...], float], ...]
    max_length: int = 75

    def rules_for(self, lhs: str) -> list[tuple[tuple[Symbol, ...], float]]:
        return [(rhs, p) for l, rhs, p in self.rules if l == lhs]

    def validate(self) -> None:
        """Check structural invariants; raise GrammarError on violation."""
        if self.start not in self.nonterminals:
            raise GrammarError(f"start symbol {self.start!r} not a nonterminal")
        totals: dict[str, float] = {}
        for lhs, rhs, prob in self.rules:
            if lhs not in self.nonterminals:
                raise GrammarError(f"rule LHS {lhs!r} not a nonterminal")
            if not rhs:
                raise GrammarError(f"empty RHS for {lhs!r}")
            if not 0.0 < prob <= 1.0:
                raise GrammarError(f"rule probability {prob} outside (0, 1]")
            for sym in rhs:
                if isinstance(sym, Role):
                    if sym is Role.EOS:
                        raise GrammarError("EOS cannot appear in a production")
                elif sym not in self.nonterminals:
                    raise GrammarError(f"unknown RHS symbol {sym!r}")
                if sym == self.start:
                    raise GrammarError("start symbol may only appear as an LHS")
            totals[lhs] = totals.get(lhs, 0.0) + prob
        for lhs in self.nonterminals:
            if lhs not in totals:
                raise GrammarError(f"nonterminal {lhs!r} has no rules")
            if abs(totals[lhs] - 1.0) > PROB_TOL:
                raise GrammarError(f"probabilities for {lhs!r} sum to {totals[lhs]}")
        if self.max_length < 1:
            raise GrammarError("max_length must be positive")


def default_grammar() -> GrammarSpec:
    """The built-in sentence grammar over part-of-speech roles.

    Verb phrases route through ``vT`` so verbs can carry an adverb, mirroring
    the 0.8/0.2 modifier split used by the subject/object/descriptor branches.
    """
    R = Role
    rules: list[tuple[str, tuple[Symbol, ...], float]] = [
        ("S", ("sNP", "VP"), 1.0),
        ("sNP", ("sT",), 0.8),
        ("sNP", ("sNP", R.CONJ, "sNP"), 0.2),
        ("VP", (R.LVERB, "descT"), 0.4),
        ("VP", ("vT", R.PREP, "oNP"), 0.4),
        ("VP", ("VP", R.CONJ, "VP"), 0.2),
        ("oNP", ("oT",), 0.7),
        ("oNP", ("oT", R.CONJ, "oNP"), 0.3),
        ("sT", (R.EADJ, R.SUBJ), 0.8),
        ("sT", (R.SUBJ,), 0.2),
        ("oT", (R.EADJ, R.OBJ), 0.8),
        ("oT", (R.OBJ,), 0.2),
        ("descT", (R.DADJ, R.DESC), 0.8),
        ("descT", (R.DESC,), 0.2),
        ("vT", (R.ADV, R.VERB), 0.8),
        ("vT", (R.VERB,), 0.2),
    ]
    spec = GrammarSpec(
        nonterminals=frozenset({"S", "sNP", "VP", "oNP", "sT", "oT", "descT", "vT"}),
        start="S",
        rules=tuple(rules),
        max_length=75,
    )
    spec.validate()
    return spec


_RULE_RE = re.compile(r"^(\S+)\s*->\s*(.+?)\s*\[([0-9.eE+-]+)\]$")


def parse_grammar_text(text: str, max_length: int = 75) -> GrammarSpec:
    """Parse the one-rule-per-line format ``LHS -> RHS... [prob]``.

    RHS names matching a Role value are terminals; everything else is a
    nonterminal. Blank lines and ``#`` comments are ignored.
    """
    role_by_value = {r.value: r for r in Role}
    raw: list[tuple[str, tuple[str, ...], float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RULE_RE.match(line)
        if m is None:
            raise GrammarError(f"line {lineno}: cannot parse rule {line!r}")
        lhs, rhs_text, prob_text = m.groups()
        raw.append((lhs, tuple(rhs_text.split()), float(prob_text)))
    nonterminals = frozenset(lhs for lhs, _, _ in raw)
    rules: list[tuple[str, tuple[Symbol, ...], float]] = []
    for lhs, rhs_names, prob in raw:
        rhs: tuple[Symbol, ...] = tuple(
            role_by_value[name] if name in role_by_value else name for name in rhs_names
        )
        rules.append((lhs, rhs, prob))
    spec = GrammarSpec(
        nonterminals=nonterminals, start="S", rules=tuple(rules), max_length=max_length
    )
    spec.validate()
    return spec


def load_grammar(path) -> GrammarSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grammar_text(fh.read())


# ---------------------------------------------------------------------------
# Compiled form: binarized rules + unit closure, for chart parsing + sampling.
# ---------------------------------------------------------------------------


@dataclass
class _BinaryEntry:
    lhs: int
    left: int
    right: int
    prob: float
    rule_idx: int  # original rule index
    pos: int  # which RHS position the left child occupies


@dataclass
class _UnitEntry:
    lhs: int
    child: int
    prob: float
    rule_idx: int


class _Compiled:
    """Binarized grammar with symbol ids and vectorized rule tables."""

    def __init__(self, spec: GrammarSpec):
        spec.validate()
        self.spec = spec
        self.symbols: list[Symbol] = list(BODY_ROLES)
        self.sym_id: dict[Symbol, int] = {s: i for i, s in enumerate(self.symbols)}
        for nt in sorted(spec.nonterminals):
            self.sym_id[nt] = len(self.symbols)
            self.symbols.append(nt)
        self.n_named = len(self.symbols)  # terminals + original nonterminals
        self.chain_of: dict[int, tuple[int, int]] = {}  # chain sym -> (rule, pos)

        self.binary: list[_BinaryEntry] = []
        self.unit: list[_UnitEntry] = []
        for ridx, (lhs, rhs, prob) in enumerate(spec.rules):
            lid = self.sym_id[lhs]
            ids = [self.sym_id[s] for s in rhs]
            if len(ids) == 1:
                self.unit.append(_UnitEntry(lid, ids[0], prob, ridx))
            elif len(ids) == 2:
                self.binary.append(_BinaryEntry(lid, ids[0], ids[1], prob, ridx, 0))
            else:
                prev = lid
                p = prob
                for pos in range(len(ids) - 2):
                    chain = len(self.symbols)
                    self.symbols.append(f"~{ridx}.{pos}")
                    self.chain_of[chain] = (ridx, pos)
                    self.binary.append(_BinaryEntry(prev, ids[pos], chain, p, ridx, pos))
                    prev, p = chain, 1.0
                self.binary.append(
                    _BinaryEntry(prev, ids[-2], ids[-1], p, ridx, len(ids) - 2)
                )
        self.n_symbols = len(self.symbols)

        self._order_units()
        # Chart cells are sparse (few live symbols), so rules are indexed by
        # their left child for the dict-based combination loop.
        self.by_left: dict[int, list[tuple[int, _BinaryEntry]]] = {}
        for bidx, b in enumerate(self.binary):
            self.by_left.setdefault(b.left, []).append((bidx, b))

        # Sampling tables: per-LHS rule list with cumulative probabilities.
        self.samp: dict[str, tuple[list[tuple[Symbol, ...]], np.ndarray]] = {}
        for nt in spec.nonterminals:
            options = spec.rules_for(nt)
            cum = np.cumsum([p for _, p in options])
            self.samp[nt] = ([rhs for rhs, _ in options], cum)

    def _order_units(self) -> None:
        """Topologically sort unit rules so cell-level closure is exact."""
        deps: dict[int, set[int]] = {}
        for u in self.unit:
            deps.setdefault(u.lhs, set()).add(u.child)
        order: list[int] = []
        state: dict[int, int] = {}

        def visit(node: int) -> None:
            if state.get(node) == 2:
                return
            if state.get(node) == 1:
                raise GrammarError("unit-rule cycle; chart closure unsupported")
            state[node] = 1
            for dep in deps.get(node, ()):  # children first
                visit(dep)
            state[node] = 2
            order.append(node)

        for node in deps:
            visit(node)
        rank = {sym: i for i, sym in enumerate(order)}
        self.unit.sort(key=lambda u: (rank[u.lhs], u.rule_idx))


_COMPILE_CACHE: dict[int, tuple[GrammarSpec, _Compiled]] = {}


def _compiled(spec: GrammarSpec) -> _Compiled:
    hit = _COMPILE_CACHE.get(id(spec))
    if hit is not None and hit[0] is spec:
        return hit[1]
    comp = _Compiled(spec)
    _COMPILE_CACHE[id(spec)] = (spec, comp)
    return comp


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class _LengthOverflow(Exception):
    pass


def sample_symbolic(grammar: GrammarSpec, rng: np.random.Generator) -> SymbolicSentence:
    """Sample a role-level sentence by top-down expansion from the start symbol.

    Derivations whose yield would exceed ``grammar.max_length`` are rejected
    and resampled so every emitted sentence is fully grammatical. Identical
    rng state produces an identical sentence.
    """
    comp = _compiled(grammar)

    def expand(sym: Symbol, leaves: list[Role]) -> ParseTree:
        if isinstance(sym, Role):
            leaves.append(sym)
            if len(leaves) > grammar.max_length:
                raise _LengthOverflow
            return ParseTree(sym)
        options, cum = comp.samp[sym]
        k = int(np.searchsorted(cum, rng.random(), side="right"))
        k = min(k, len(options) - 1)  # guard the cum[-1] < 1 rounding edge
        children = tuple(expand(child, leaves) for child in options[k])
        return ParseTree(sym, children)

    for _ in range(RESAMPLE_LIMIT):
        leaves: list[Role] = []
        try:
            tree = expand(grammar.start, leaves)
        except _LengthOverflow:
            continue
        return SymbolicSentence(tuple(leaves), tree)
    raise ResampleLimitError(
        f"{RESAMPLE_LIMIT} consecutive samples exceeded max_length={grammar.max_length}"
    )


# ---------------------------------------------------------------------------
# Chart parsing: inside probabilities and max-probability trees
# ---------------------------------------------------------------------------


def _inside_chart(
    comp: _Compiled, roles: Sequence[Role]
) -> dict[tuple[int, int], dict[int, float]]:
    """chart[i, l][s] = total probability that symbol s derives roles[i:i+l)."""
    n = len(roles)
    chart: dict[tuple[int, int], dict[int, float]] = {}
    for i, role in enumerate(roles):
        cell = {comp.sym_id[role]: 1.0}
        for u in comp.unit:
            if u.child in cell:
                cell[u.lhs] = cell.get(u.lhs, 0.0) + u.prob * cell[u.child]
        chart[i, 1] = cell
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            cell: dict[int, float] = {}
            for a in range(1, length):
                left = chart[i, a]
                right = chart[i + a, length - a]
                for lsym, lp in left.items():
                    for _, b in comp.by_left.get(lsym, ()):
                        rp = right.get(b.right)
                        if rp is not None:
                            cell[b.lhs] = cell.get(b.lhs, 0.0) + b.prob * lp * rp
            for u in comp.unit:
                if u.child in cell:
                    cell[u.lhs] = cell.get(u.lhs, 0.0) + u.prob * cell[u.child]
            chart[i, length] = cell
    return chart


# A Viterbi cell maps symbol -> (prob, rule_idx, split, kind, entry).
# kind: 0 = leaf, 1 = unit entry, 2 = binary entry. Ties prefer the lowest
# original rule index, then the lowest split.
_Cell = dict[int, tuple[float, int, int, int, int]]


def _viterbi_tree(comp: _Compiled, roles: Sequence[Role]) -> ParseTree | None:
    n = len(roles)
    chart: dict[tuple[int, int], _Cell] = {}

    def offer(cell: _Cell, sym: int, prob: float, rule: int, split: int, kind: int, entry: int) -> None:
        cur = cell.get(sym)
        if cur is None or prob > cur[0] or (prob == cur[0] and (rule, split) < (cur[1], cur[2])):
            cell[sym] = (prob, rule, split, kind, entry)

    for i, role in enumerate(roles):
        cell: _Cell = {comp.sym_id[role]: (1.0, -1, -1, 0, -1)}
        for uidx, u in enumerate(comp.unit):
            got = cell.get(u.child)
            if got is not None:
                offer(cell, u.lhs, u.prob * got[0], u.rule_idx, -1, 1, uidx)
        chart[i, 1] = cell
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            cell = {}
            for a in range(1, length):
                left = chart[i, a]
                right = chart[i + a, length - a]
                for lsym, lgot in left.items():
                    for bidx, b in comp.by_left.get(lsym, ()):
                        rgot = right.get(b.right)
                        if rgot is not None:
                            offer(cell, b.lhs, b.prob * lgot[0] * rgot[0], b.rule_idx, a, 2, bidx)
            for uidx, u in enumerate(comp.unit):
                got = cell.get(u.child)
                if got is not None:
                    offer(cell, u.lhs, u.prob * got[0], u.rule_idx, -1, 1, uidx)
            chart[i, length] = cell
    start = comp.sym_id[comp.spec.start]
    if start not in chart[0, n]:
        return None

    def build(i: int, length: int, sym: int) -> ParseTree:
        _, _, split, kind, entry = chart[i, length][sym]
        if kind == 0:
            return ParseTree(comp.symbols[sym])
        if kind == 1:
            return ParseTree(comp.symbols[sym], (build(i, length, comp.unit[entry].child),))
        b = comp.binary[entry]
        children = [build(i, split, b.left)] + expand_right(i + split, length - split, b.right)
        return ParseTree(comp.symbols[sym], tuple(children))

    def expand_right(i: int, length: int, sym: int) -> list[ParseTree]:
        if sym not in comp.chain_of:
            return [build(i, length, sym)]
        _, _, split, _, entry = chart[i, length][sym]
        b = comp.binary[entry]
        return [build(i, split, b.left)] + expand_right(i + split, length - split, b.right)

    return build(0, n, start)


def _check_body(roles: Sequence[Role]) -> bool:
    return bool(roles) and all(isinstance(r, Role) and r is not Role.EOS for r in roles)


def recognize(grammar: GrammarSpec, roles: Sequence[Role]) -> ParseTree | None:
    """Return a maximum-probability parse of the role sequence, or None."""
    if not _check_body(roles):
        return None
    return _viterbi_tree(_compiled(grammar), list(roles))


def string_probability(grammar: GrammarSpec, roles: Sequence[Role]) -> float:
    """Total probability of the sequence summed over all derivations."""
    if not _check_body(roles):
        return 0.0
    comp = _compiled(grammar)
    chart = _inside_chart(comp, list(roles))
    return chart[0, len(roles)].get(comp.sym_id[grammar.start], 0.0)


def derivation_nll(grammar: GrammarSpec, roles: Sequence[Role]) -> float:
    """Negative natural log of the all-derivations probability of the sequence."""
    p = string_probability(grammar, roles)
    if p <= 0.0:
        raise NotInLanguageError(f"sequence of length {len(roles)} is not in the language")
    return -math.log(p)


def tree_stats(tree: ParseTree) -> tuple[int, int]:
    """(depth, length): edges on the longest root-to-leaf path, and leaf count."""
    if tree.is_leaf:
        return 0, 1
    depth = 0
    length = 0
    for child in tree.children:
        d, l = tree_stats(child)
        depth = max(depth, d + 1)
        length += l
    return depth, length


def tree_leaves(tree: ParseTree) -> tuple[Role, ...]:
    """Left-to-right terminal yield of a parse tree."""
    if tree.is_leaf:
        assert isinstance(tree.symbol, Role)
        return (tree.symbol,)
    out: list[Role] = []
    for child in tree.children:
        out.extend(tree_leaves(child))
    return tuple(out)
