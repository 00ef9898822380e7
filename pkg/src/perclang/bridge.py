"""From training iterations to percolation edge probability.

Online training exposes (entity, descriptor) pairs at a roughly constant
rate, so the fraction of seen edges that have appeared by iteration t follows
a coupon-collector curve p(t) = 1 - exp(-c t). Calibrating c on a short
simulated stream and equating p(t*) with the analytic percolation threshold
of the seen-edge graph predicts the iteration t* at which the descriptive
structure becomes connected enough to generalize. The form of p(t) is a
modeling choice and is swappable; only proportionality claims are testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


import numpy as np

from .corpus import Vocabulary, build_vocabulary, sentence_stream
from .grammar import GrammarSpec
from .typegraph import TypeGraph, TypeGraphParams, build_typegraph, extract_bindings
from .percolation import DegreeDistribution, threshold_analytic

__all__ = [
    "ExposureModel",
    "UnreachableThresholdError",
    "density_from_stream",
    "calibrate_exposure",
    "seen_degree_distributions",
    "predicted_transition",
]

DEFAULT_CALIBRATION_SENTENCES = 20000


class UnreachableThresholdError(ValueError):
    """The exposure model saturates below the percolation threshold."""


@dataclass(frozen=True)
class ExposureModel:
    """p(t) = cap * (1 - exp(-rate * t)): fraction of seen edges exposed by t."""

    rate: float
    cap: float = 1.0

    def probability(self, t: float) -> float:
        return self.cap * (1.0 - math.exp(-self.rate * t))

    def invert(self, p: float) -> float:
        """Iterations needed to reach exposure p; error if capped below it."""
        if p >= self.cap:
            raise UnreachableThresholdError(
                f"exposure saturates at {self.cap}, below the requested {p}"
            )
        return -math.log(1.0 - p / self.cap) / self.rate


def density_from_stream(
    graph: TypeGraph,
    grammar: GrammarSpec,
    iterations: int,
    batch_size: int,
    seed: int,
    vocab: Vocabulary | None = None,
) -> np.ndarray:
    """Binary co-occurrence matrix after iterations x batch_size sentences.

    Streams are nested: increasing ``iterations`` only ever adds sentences,
    so the density matrix is elementwise monotone in t.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    vocab = vocab or build_vocabulary(graph)
    D = np.zeros((graph.n_entities, graph.n_desc_props), dtype=np.uint8)
    stream = sentence_stream(graph, grammar, vocab, seed)
    for _ in range(iterations * batch_size):
        sentence = next(stream)
        bindings = extract_bindings(grammar, vocab.typed(sentence.token_ids), tree=sentence.tree)
        for e, k in bindings.descriptor_pairs:
            D[e, k] = 1
    return D


def calibrate_exposure(
    graph: TypeGraph,
    grammar: GrammarSpec,
    batch_size: int,
    seed: int,
    calibration_sentences: int = DEFAULT_CALIBRATION_SENTENCES,
    cap: float = 1.0,
) -> ExposureModel:
    """Fit the exposure rate from a short stream prefix.

    Counts how many distinct seen edges appear among the first
    ``calibration_sentences`` sentences and solves
    p(t_cal) = 1 - exp(-rate * t_cal) for the rate, with t measured in
    iterations of ``batch_size`` sentences.
    """
    if calibration_sentences < 1:
        raise ValueError("need a positive calibration prefix")
    t_cal = calibration_sentences / batch_size
    vocab = build_vocabulary(graph)
    D = density_from_stream(graph, grammar, calibration_sentences, 1, seed, vocab=vocab)
    exposed = int(D.sum())
    total_seen = int(graph.seen_desc.size)
    p_hat = exposed / total_seen
    if not 0.0 < p_hat < 1.0:
        raise ValueError(f"calibration prefix exposed {exposed}/{total_seen} edges")
    rate = -math.log(1.0 - p_hat) / t_cal
    return ExposureModel(rate=rate, cap=cap)


def seen_degree_distributions(
    graph: TypeGraph,
) -> tuple[DegreeDistribution, DegreeDistribution]:
    """Empirical degree distributions of the seen descriptive edge graph."""
    ent_deg = np.full(graph.n_entities, graph.seen_desc.shape[1], dtype=np.int64)
    desc_deg = np.bincount(graph.seen_desc.ravel(), minlength=graph.n_desc_props)

    def pmf(degrees: np.ndarray) -> DegreeDistribution:
        counts = np.bincount(degrees)
        n = degrees.size
        return DegreeDistribution(
            {int(k): c / n for k, c in enumerate(counts) if c > 0}
        )

    return pmf(ent_deg), pmf(desc_deg)


def predicted_transition(
    params: TypeGraphParams,
    exposure: ExposureModel | None = None,
    batch_size: int = 128,
    calibration_sentences: int = DEFAULT_CALIBRATION_SENTENCES,
) -> tuple[float, float]:
    """(t*, p_c): predicted transition iteration for the seen-edge graph.

    Builds the graph, computes the analytic threshold from its empirical
    degree distributions, calibrates the exposure model if none is given,
    and inverts p(t*) = p_c.
    """
    graph = build_typegraph(params)
    from .grammar import default_grammar

    grammar = default_grammar()
    if exposure is None:
        exposure = calibrate_exposure(
            graph, grammar, batch_size, params.seed, calibration_sentences
        )
    dist1, dist2 = seen_degree_distributions(graph)
    p_c = threshold_analytic(dist1, dist2)
    return exposure.invert(p_c), p_c
