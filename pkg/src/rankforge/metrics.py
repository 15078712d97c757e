"""Ranking evaluation metrics: nDCG@k, Recall@k, MRR@k, Kendall tau.

Run orderings are made deterministic before scoring: documents are
sorted by descending score with ties broken by ascending passage id, so
results never depend on input order or platform sort quirks. Queries
with no judged-relevant documents are excluded from means and counted
separately, matching the common trec-eval behavior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import InvalidInputError, JudgedPool, ScoredList


@dataclass(frozen=True)
class MetricReport:
    """Per-query metric values plus their arithmetic mean."""

    metric: str
    cutoff: int
    per_query: dict[str, float]
    mean: float
    num_queries: int
    num_excluded: int


def ranked_ids(scored: ScoredList) -> tuple[str, ...]:
    """Document ids ordered by descending score, ties by ascending id."""
    order = sorted(zip(scored.passage_ids, scored.scores), key=lambda t: (-t[1], t[0]))
    return tuple(pid for pid, _ in order)


def _build_report(metric: str, cutoff: int, values: dict[str, float], excluded: int) -> MetricReport:
    mean = float(np.mean(list(values.values()))) if values else 0.0
    return MetricReport(metric, cutoff, values, mean, len(values), excluded)


def _dcg(grades: Iterable[int], k: int) -> float:
    total = 0.0
    for i, g in enumerate(grades):
        if i >= k:
            break
        total += (2.0 ** g - 1.0) / np.log2(i + 2.0)
    return total


def ndcg_at_k(run: Iterable[ScoredList], qrels: JudgedPool, k: int,
              linear_gain: bool = False) -> MetricReport:
    """Normalized discounted cumulative gain at cutoff k.

    Uses the exponential gain 2^rel - 1 with log2(i+1) discount (the
    TREC-DL convention); ``linear_gain`` switches to gain = rel for
    parity checks against tools using the other convention.
    """
    if k < 1:
        raise InvalidInputError(f"cutoff must be >= 1, got {k}")
    gain = (lambda g: float(g)) if linear_gain else (lambda g: 2.0 ** g - 1.0)
    values: dict[str, float] = {}
    excluded = 0
    for scored in run:
        qid = scored.query_id
        judged = qrels.grades.get(qid, {})
        ideal = sorted(judged.values(), reverse=True)
        idcg = sum(gain(g) / np.log2(i + 2.0) for i, g in enumerate(ideal[:k]))
        if idcg <= 0.0:
            excluded += 1
            continue
        dcg = sum(
            gain(judged.get(pid, 0)) / np.log2(i + 2.0)
            for i, pid in enumerate(ranked_ids(scored)[:k])
        )
        values[qid] = dcg / idcg
    return _build_report(f"ndcg@{k}", k, values, excluded)


def recall_at_k(run: Iterable[ScoredList], qrels: JudgedPool, k: int,
                positive_threshold: int = 1) -> MetricReport:
    """Fraction of judged-relevant documents retrieved within the top k."""
    if k < 1:
        raise InvalidInputError(f"cutoff must be >= 1, got {k}")
    values: dict[str, float] = {}
    excluded = 0
    for scored in run:
        relevant = qrels.relevant_ids(scored.query_id, positive_threshold)
        if not relevant:
            excluded += 1
            continue
        hit = sum(1 for pid in ranked_ids(scored)[:k] if pid in relevant)
        values[scored.query_id] = hit / len(relevant)
    return _build_report(f"recall@{k}", k, values, excluded)


def mrr_at_k(run: Iterable[ScoredList], qrels: JudgedPool, k: int,
             positive_threshold: int = 1) -> MetricReport:
    """Reciprocal rank of the first relevant document within the top k, else 0."""
    if k < 1:
        raise InvalidInputError(f"cutoff must be >= 1, got {k}")
    values: dict[str, float] = {}
    excluded = 0
    for scored in run:
        relevant = qrels.relevant_ids(scored.query_id, positive_threshold)
        if not relevant:
            excluded += 1
            continue
        rr = 0.0
        for i, pid in enumerate(ranked_ids(scored)[:k]):
            if pid in relevant:
                rr = 1.0 / (i + 1)
                break
        values[scored.query_id] = rr
    return _build_report(f"mrr@{k}", k, values, excluded)


def kendall_tau(scores_a, scores_b) -> float:
    """Kendall rank correlation between two score vectors over the same items.

    Plain tau-a: (concordant - discordant) / (n(n-1)/2); ties contribute
    zero. O(n^2), fine at candidate-list sizes.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"kendall_tau needs two equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise InvalidInputError("kendall_tau needs at least 2 items")
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    upper = np.triu_indices(n, k=1)
    return float((da[upper] * db[upper]).sum() / (n * (n - 1) / 2))
