"""Scoring of model generations and probe responses.

Generation logs and probe files are JSONL with a schema header line, so any
training harness in any framework can produce them; scoring is a pure
function of (records, graph, grammar, vocabulary) and is reproducible
bit-for-bit. Ungrammatical outputs count as type-check failures rather than
being dropped, which keeps early-training scores honest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import corpus as cp
from .corpus import Sentence, Vocabulary
from .grammar import GrammarSpec, Role, derivation_nll, recognize, sample_symbolic, tree_stats
from .typegraph import (
    TypeGraph,
    UnparsableSentenceError,
    check_bindings,
    extract_bindings,
    type_check,
)
from .rng import derive

__all__ = [
    "GenerationRecord", "ProbeRequest", "ProbeResponse", "MetricReport",
    "VocabularyMismatchError", "UnmatchedResponseError",
    "score_generations", "build_probes", "score_probes",
    "memorization_ceiling", "generation_stats", "reference_nll",
    "write_records", "read_records", "write_probes", "read_probes",
    "write_responses", "read_responses", "write_metrics_csv", "read_metrics_csv",
    "PROBE_FAMILIES",
]

GENERATIONS_SCHEMA = "perclang/generations/v1"
PROBES_SCHEMA = "perclang/probes/v1"
RESPONSES_SCHEMA = "perclang/probe_responses/v1"
METRICS_SCHEMA = "perclang/metrics/v1"

PROBE_FAMILIES = ("seen", "uniform", "randomize_values", "randomize_grammar", "next_descriptor")

DESCRIPTIVE_MAX_LEN = 6  # sentence strata by body length: short => descriptive
RELATIVE_LEN_RANGE = (7, 9)  # mid-length => relative

DEFAULT_EVAL_BATCH = 1000


class VocabularyMismatchError(ValueError):
    """A record used tokens that do not resolve in the vocabulary."""


class UnmatchedResponseError(ValueError):
    """A probe response has no matching request id."""


@dataclass(frozen=True)
class GenerationRecord:
    """One model generation: the continuation produced for a task input.

    ``target`` is the ground-truth sentence (with EOS) when the producer of
    the log knows it; exact-match metrics require it.
    """

    iteration: int
    task: str
    input: tuple[str, ...]
    output: tuple[str, ...]
    target: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ProbeRequest:
    id: int
    kind: str  # "next_token" | "sequence_nll"
    family: str
    prefix: tuple[str, ...]
    target: str | None = None  # next_token probes
    tokens: tuple[str, ...] | None = None  # sequence_nll probes (include EOS)


@dataclass(frozen=True)
class ProbeResponse:
    id: int
    iteration: int = 0
    prob: float | None = None
    rank: int | None = None
    nll: float | None = None


@dataclass(frozen=True)
class MetricReport:
    """Named metric values at one iteration, with per-metric sample counts."""

    iteration: int
    values: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)


def _mean(flags: Sequence[float]) -> float:
    return float(np.mean(flags)) if len(flags) else float("nan")


def _strip_eos(tokens: Sequence[str]) -> tuple[str, ...]:
    out = list(tokens)
    while out and out[-1] == cp.EOS:
        out.pop()
    return tuple(out)


def _body_before_eos(tokens: Sequence[str]) -> tuple[str, ...]:
    body: list[str] = []
    for t in tokens:
        if t == cp.EOS:
            break
        body.append(t)
    return tuple(body)


def score_generations(
    records: Sequence[GenerationRecord],
    grammar: GrammarSpec,
    graph: TypeGraph,
    vocab: Vocabulary,
) -> list[MetricReport]:
    """Score a generation log; one report per iteration present.

    Metric names are prefixed by task, e.g. ``free/grammaticality``,
    ``unscramble/exact_match``, ``conditional/conditions_satisfied``.
    Grammaticality and the three type checks are computed for every task;
    exact/per-token metrics (plus length strata) for unscrambling; the
    conditions-satisfied fraction for conditional generation.

    Aggregation of the decomposed type checks: an ungrammatical output
    counts as a failure everywhere, but a grammatical sentence that simply
    contains no descriptor (or no verb triple) is excluded from the
    descriptive (relative) denominator rather than passing vacuously --
    otherwise verb-only sentences would inflate the descriptive score far
    above the 1/n_classes random baseline. ``typecheck_all`` stays averaged
    over every record, so sentences without descriptors do raise it.
    """
    by_iter: dict[int, list[GenerationRecord]] = {}
    for rec in records:
        by_iter.setdefault(rec.iteration, []).append(rec)

    reports = []
    for iteration in sorted(by_iter):
        values: dict[str, float] = {}
        counts: dict[str, int] = {}
        by_task: dict[str, list[GenerationRecord]] = {}
        for rec in by_iter[iteration]:
            by_task.setdefault(rec.task, []).append(rec)
        for task, recs in sorted(by_task.items()):
            gram: list[float] = []
            desc: list[float] = []
            rel: list[float] = []
            allc: list[float] = []
            for rec in recs:
                body = _body_before_eos(rec.output)
                try:
                    ids = vocab.encode(body)
                except KeyError as ex:
                    raise VocabularyMismatchError(str(ex)) from None
                roles = [vocab.role_of(i) for i in ids]
                ok = (
                    bool(body)
                    and all(r is not None for r in roles)
                    and len(body) <= grammar.max_length
                    and recognize(grammar, roles) is not None
                )
                gram.append(float(ok))
                if ok:
                    bindings = extract_bindings(grammar, vocab.typed(ids))
                    res = check_bindings(graph, bindings)
                    if bindings.descriptor_pairs:
                        desc.append(float(res.descriptive))
                    if bindings.relative_triples:
                        rel.append(float(res.relative))
                    allc.append(float(res.all_ok))
                else:
                    desc.append(0.0)
                    rel.append(0.0)
                    allc.append(0.0)
            values[f"{task}/grammaticality"] = _mean(gram)
            values[f"{task}/typecheck_descriptive"] = _mean(desc)
            values[f"{task}/typecheck_relative"] = _mean(rel)
            values[f"{task}/typecheck_all"] = _mean(allc)
            counts[f"{task}/grammaticality"] = len(gram)
            counts[f"{task}/typecheck_descriptive"] = len(desc)
            counts[f"{task}/typecheck_relative"] = len(rel)
            counts[f"{task}/typecheck_all"] = len(allc)

            if task == "unscramble":
                exact: list[float] = []
                per_token: list[float] = []
                exact_short: list[float] = []
                exact_mid: list[float] = []
                for rec in recs:
                    if rec.target is None:
                        continue
                    y = _strip_eos(rec.target)
                    out = _body_before_eos(rec.output)
                    hit = float(out == y)
                    exact.append(hit)
                    per_token.append(
                        sum(a == b for a, b in zip(y, out)) / len(y) if y else 0.0
                    )
                    if len(y) <= DESCRIPTIVE_MAX_LEN:
                        exact_short.append(hit)
                    elif RELATIVE_LEN_RANGE[0] <= len(y) <= RELATIVE_LEN_RANGE[1]:
                        exact_mid.append(hit)
                values[f"{task}/exact_match"] = _mean(exact)
                values[f"{task}/per_token_accuracy"] = _mean(per_token)
                values[f"{task}/exact_match_descriptive"] = _mean(exact_short)
                values[f"{task}/exact_match_relative"] = _mean(exact_mid)
                counts[f"{task}/exact_match"] = len(exact)
                counts[f"{task}/per_token_accuracy"] = len(per_token)
                counts[f"{task}/exact_match_descriptive"] = len(exact_short)
                counts[f"{task}/exact_match_relative"] = len(exact_mid)

            if task == "conditional":
                sat: list[float] = []
                for rec in recs:
                    conditioning = [t for t in rec.input if t not in (cp.COND, cp.SEP)]
                    if not conditioning:
                        continue
                    present = set(_body_before_eos(rec.output))
                    sat.append(sum(t in present for t in conditioning) / len(conditioning))
                values[f"{task}/conditions_satisfied"] = _mean(sat)
                counts[f"{task}/conditions_satisfied"] = len(sat)
        reports.append(MetricReport(iteration, values, counts))
    return reports


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


def build_probes(
    graph: TypeGraph,
    grammar: GrammarSpec,
    vocab: Vocabulary,
    n: int,
    seed: int,
    family: str,
) -> list[ProbeRequest]:
    """Deterministic probe set of one family.

    ``next_descriptor`` probes ask for the final descriptor of a descriptive
    sentence as the next token (prefix framed as free generation). The other
    families are full-sentence NLL probes: ``seen`` samples from the training
    edges, ``uniform`` from any class-valid pairing, and the two randomize
    families break type constraints or grammar respectively.
    """
    if family not in PROBE_FAMILIES:
        raise ValueError(f"unknown probe family {family!r}")
    probes: list[ProbeRequest] = []
    frame = (cp.FREE, cp.SEP)
    for i in range(n):
        rng = derive(seed, 3, i)
        if family == "next_descriptor":
            sentence = _sample_with_descriptor(graph, grammar, vocab, rng)
            toks = vocab.decode(sentence.token_ids)
            last_desc = max(j for j, r in enumerate(sentence.roles) if r is Role.DESC)
            probes.append(
                ProbeRequest(
                    id=i, kind="next_token", family=family,
                    prefix=frame + toks[:last_desc], target=toks[last_desc],
                )
            )
            continue
        level = "class" if family == "uniform" else "seen"
        sentence = cp.populate(sample_symbolic(grammar, rng), graph, vocab, rng, level=level)
        if family in ("randomize_values", "randomize_grammar"):
            sentence = cp.perturb(sentence, family, graph, vocab, rng)
        tokens = vocab.decode(sentence.token_ids) + (cp.EOS,)
        probes.append(
            ProbeRequest(id=i, kind="sequence_nll", family=family, prefix=frame, tokens=tokens)
        )
    return probes


def _sample_with_descriptor(graph, grammar, vocab, rng) -> Sentence:
    for _ in range(1000):
        symbolic = sample_symbolic(grammar, rng)
        if any(r is Role.DESC for r in symbolic.roles):
            return cp.populate(symbolic, graph, vocab, rng)
    raise RuntimeError("no descriptive sentence sampled within the budget")


def score_probes(
    requests: Sequence[ProbeRequest],
    responses: Sequence[ProbeResponse],
    graph: TypeGraph,
) -> list[MetricReport]:
    """Aggregate probe responses; one report per iteration present.

    Next-token probes yield mean target probability, mean rank normalized by
    the descriptor count, and the fraction ranked within the top |K|/C (the
    per-class property count). Sequence-NLL probes report a mean per family.
    """
    req_by_id = {r.id: r for r in requests}
    by_iter: dict[int, list[ProbeResponse]] = {}
    for resp in responses:
        if resp.id not in req_by_id:
            raise UnmatchedResponseError(f"response id {resp.id} has no request")
        by_iter.setdefault(resp.iteration, []).append(resp)

    n_props = graph.n_desc_props
    top_k = n_props / graph.n_classes
    reports = []
    for iteration in sorted(by_iter):
        probs: list[float] = []
        ranks: list[float] = []
        nlls: dict[str, list[float]] = {}
        for resp in by_iter[iteration]:
            req = req_by_id[resp.id]
            if req.kind == "next_token":
                if resp.prob is None or resp.rank is None:
                    raise UnmatchedResponseError(f"response {resp.id} lacks prob/rank")
                probs.append(resp.prob)
                ranks.append(resp.rank)
            else:
                if resp.nll is None:
                    raise UnmatchedResponseError(f"response {resp.id} lacks nll")
                nlls.setdefault(req.family, []).append(resp.nll)
        values: dict[str, float] = {}
        counts: dict[str, int] = {}
        if probs:
            values["probe/avg_probability"] = _mean(probs)
            values["probe/normalized_rank"] = float(np.mean(ranks) / n_props)
            values["probe/percent_top_k"] = float(np.mean([r <= top_k for r in ranks]))
            for name in ("avg_probability", "normalized_rank", "percent_top_k"):
                counts[f"probe/{name}"] = len(probs)
        for family, vals in sorted(nlls.items()):
            values[f"probe/nll_{family}"] = _mean(vals)
            counts[f"probe/nll_{family}"] = len(vals)
        reports.append(MetricReport(iteration, values, counts))
    return reports


# ---------------------------------------------------------------------------
# Closed-form ceiling and reference statistics
# ---------------------------------------------------------------------------


def memorization_ceiling(
    batch_size: float,
    iterations: float,
    n_classes: float,
    n_entities: float,
    n_props: float,
    repetitions: float,
    edge_fraction: float,
) -> float:
    """Best possible descriptive accuracy for a purely memorizing learner.

    Random class guessing gives the 1/C floor; on top of that the learner can
    only know pairs it has seen often enough, which caps the gain at the seen
    fraction times the (saturating) coverage ratio
    ``0.25 * B * t * C / (E * K * R * f)``.
    """
    if min(batch_size, iterations, n_classes, n_entities, n_props, repetitions, edge_fraction) < 0:
        raise ValueError("all parameters must be nonnegative")
    coverage = 0.25 * batch_size * iterations * n_classes / (
        n_entities * n_props * repetitions * edge_fraction
    )
    return 1.0 / n_classes + edge_fraction * min(1.0, coverage)


@dataclass(frozen=True)
class GenerationStats:
    nll: tuple[float, float, float]  # min, mean, max
    depth: tuple[float, float, float]
    length: tuple[float, float, float]
    filtered_fraction: float


def generation_stats(
    records: Sequence[GenerationRecord], grammar: GrammarSpec, vocab: Vocabulary
) -> GenerationStats:
    """Distributional statistics of grammatical outputs under the grammar.

    Ungrammatical generations (whose NLL would be infinite) are dropped and
    reported via ``filtered_fraction``.
    """
    nlls: list[float] = []
    depths: list[int] = []
    lengths: list[int] = []
    total = 0
    for rec in records:
        total += 1
        body = _body_before_eos(rec.output)
        try:
            ids = vocab.encode(body)
        except KeyError:
            continue
        roles = [vocab.role_of(i) for i in ids]
        if not body or any(r is None for r in roles) or len(body) > grammar.max_length:
            continue
        tree = recognize(grammar, roles)
        if tree is None:
            continue
        nlls.append(derivation_nll(grammar, roles))
        d, l = tree_stats(tree)
        depths.append(d)
        lengths.append(l)
    if not nlls:
        raise ValueError("no grammatical outputs to summarize")

    def mmm(xs) -> tuple[float, float, float]:
        return (float(np.min(xs)), float(np.mean(xs)), float(np.max(xs)))

    return GenerationStats(
        nll=mmm(nlls),
        depth=mmm(depths),
        length=mmm(lengths),
        filtered_fraction=1.0 - len(nlls) / total,
    )


def reference_nll(
    tokens: Sequence[str],
    graph: TypeGraph,
    grammar: GrammarSpec,
    vocab: Vocabulary,
) -> float:
    """NLL of a token sentence under a class-uniform generating process.

    Derivation NLL of the role sequence plus a uniform-choice cost per
    content token over its class-valid pool (function words uniform over
    their full pools). Infinite when the sentence is ungrammatical or breaks
    type constraints, so perturbed controls always score worse than valid
    ones.
    """
    body = _strip_eos(tokens)
    try:
        ids = vocab.encode(body)
    except KeyError:
        return math.inf
    roles = [vocab.role_of(i) for i in ids]
    if not body or any(r is None for r in roles):
        return math.inf
    typed = vocab.typed(ids)
    try:
        bindings = extract_bindings(grammar, typed)
    except UnparsableSentenceError:
        return math.inf
    check = type_check(graph, grammar, typed)
    if not check.all_ok:
        return math.inf
    total = derivation_nll(grammar, roles)
    ent_per = graph.n_entities // graph.n_classes
    desc_per = graph.n_desc_props // graph.n_classes
    verb_per = graph.n_verbs // graph.n_classes
    for role in roles:
        if role is Role.SUBJ or role is Role.OBJ:
            total += math.log(graph.n_classes * ent_per) if role is Role.SUBJ else math.log(ent_per)
        elif role is Role.DESC:
            total += math.log(desc_per)
        elif role is Role.VERB:
            total += math.log(verb_per)
        else:
            total += math.log(len(vocab.ids_for_role(role)))
    return total


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _write_jsonl(path, schema: str, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": schema}) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _read_jsonl(path, schema: str) -> list[dict]:
    rows: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as ex:
                raise cp.MalformedRecordError(lineno, str(ex)) from None
            if lineno == 1 and "schema" in rec:
                if rec["schema"] != schema:
                    raise cp.MalformedRecordError(lineno, f"unexpected schema {rec['schema']!r}")
                continue
            rows.append(rec)
    return rows


def write_records(path, records: Iterable[GenerationRecord]) -> None:
    def rows():
        for r in records:
            row = {
                "iteration": r.iteration,
                "task": r.task,
                "input": list(r.input),
                "output": list(r.output),
            }
            if r.target is not None:
                row["target"] = list(r.target)
            yield row

    _write_jsonl(path, GENERATIONS_SCHEMA, rows())


def read_records(path) -> list[GenerationRecord]:
    out = []
    for row in _read_jsonl(path, GENERATIONS_SCHEMA):
        out.append(
            GenerationRecord(
                iteration=int(row["iteration"]),
                task=row["task"],
                input=tuple(row["input"]),
                output=tuple(row["output"]),
                target=tuple(row["target"]) if "target" in row else None,
            )
        )
    return out


def write_probes(path, probes: Iterable[ProbeRequest]) -> None:
    def rows():
        for p in probes:
            row = {"id": p.id, "kind": p.kind, "family": p.family, "prefix": list(p.prefix)}
            if p.target is not None:
                row["target"] = p.target
            if p.tokens is not None:
                row["tokens"] = list(p.tokens)
            yield row

    _write_jsonl(path, PROBES_SCHEMA, rows())


def read_probes(path) -> list[ProbeRequest]:
    out = []
    for row in _read_jsonl(path, PROBES_SCHEMA):
        out.append(
            ProbeRequest(
                id=int(row["id"]),
                kind=row["kind"],
                family=row["family"],
                prefix=tuple(row["prefix"]),
                target=row.get("target"),
                tokens=tuple(row["tokens"]) if "tokens" in row else None,
            )
        )
    return out


def write_responses(path, responses: Iterable[ProbeResponse]) -> None:
    def rows():
        for r in responses:
            row: dict = {"id": r.id, "iteration": r.iteration}
            if r.prob is not None:
                row["prob"] = r.prob
            if r.rank is not None:
                row["rank"] = r.rank
            if r.nll is not None:
                row["nll"] = r.nll
            yield row

    _write_jsonl(path, RESPONSES_SCHEMA, rows())


def read_responses(path) -> list[ProbeResponse]:
    out = []
    for row in _read_jsonl(path, RESPONSES_SCHEMA):
        out.append(
            ProbeResponse(
                id=int(row["id"]),
                iteration=int(row.get("iteration", 0)),
                prob=row.get("prob"),
                rank=row.get("rank"),
                nll=row.get("nll"),
            )
        )
    return out


def write_metrics_csv(path, reports: Sequence[MetricReport]) -> None:
    """CSV keyed by (iteration, metric); header line carries the schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "metric", "value", "n"])
        for report in sorted(reports, key=lambda r: r.iteration):
            for metric in sorted(report.values):
                value = report.values[metric]
                writer.writerow(
                    [report.iteration, metric, repr(value), report.counts.get(metric, 0)]
                )


def read_metrics_csv(path) -> list[MetricReport]:
    by_iter: dict[int, MetricReport] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ValueError("missing schema header")
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["iteration", "metric", "value", "n"]:
            raise ValueError(f"unexpected metrics header {header}")
        for row in reader:
            if not row:
                continue
            iteration, metric, value, n = int(row[0]), row[1], float(row[2]), int(row[3])
            report = by_iter.setdefault(iteration, MetricReport(iteration, {}, {}))
            report.values[metric] = value
            report.counts[metric] = n
    return [by_iter[i] for i in sorted(by_iter)]
