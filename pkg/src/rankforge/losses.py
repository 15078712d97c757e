"""The six training objectives, each returning value plus analytic gradient.

Pointwise/pairwise losses (BCE, Hinge, MarginMSE) operate on a
(positive, negative) score pair; listwise losses (InfoNCE,
DistillRankNet, ADR-MSE) operate on a whole candidate list. Gradients
are hand-derived so the finite-difference suite is a genuine
correctness oracle.

Two conventions worth stating up front:

* The teacher-ordered pairwise distillation loss penalizes
  ``softplus(s_j - s_i)`` for every pair where the teacher prefers i
  over j, following the RankNet convention (Burges et al., 2005):
  agreement with the teacher minimizes the loss.
* The differentiable rank of score i is
  ``r_i = 1 + sum_{j != i} sigmoid((s_j - s_i) / T)``, so the best
  score approaches rank 1 and ranks always sum to n(n+1)/2.

All log/sigmoid terms are computed in overflow-safe forms; no
intermediate exp(x) is evaluated for large positive x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DistillTriplet,
    InvalidInputError,
    LossConfig,
    LossOutput,
    ScoredList,
    TeacherRanking,
)

OBJECTIVES = ("bce", "hinge", "infonce", "margin_mse", "distill_ranknet", "adr_mse")

PAIRWISE_OBJECTIVES = ("bce", "hinge", "margin_mse")
TEACHER_ORDERED_OBJECTIVES = ("distill_ranknet", "adr_mse")


class DispatchError(InvalidInputError):
    """A batch shape does not match the requested objective."""


def _require_finite_scalars(**scores: float):
    for name, value in scores.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branchless-stable: exp only ever sees non-positive arguments
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _softplus_scalar(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def bce_pair(s_pos: float, s_neg: float) -> LossOutput:
    """Pointwise binary cross-entropy on a (positive, negative) score pair.

    value = -log(sigmoid(s_pos)) - log(1 - sigmoid(s_neg)), computed as
    softplus(-s_pos) + softplus(s_neg). Gradient entries are
    (sigmoid(s_pos) - 1, sigmoid(s_neg)).
    """
    s_pos, s_neg = float(s_pos), float(s_neg)
    _require_finite_scalars(s_pos=s_pos, s_neg=s_neg)
    value = _softplus_scalar(-s_pos) + _softplus_scalar(s_neg)
    grad = np.array([_sigmoid_scalar(s_pos) - 1.0, _sigmoid_scalar(s_neg)])
    return LossOutput(value, grad)


def hinge_pair(s_pos: float, s_neg: float, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Pairwise hinge: max(0, margin - (s_pos - s_neg)).

    Subgradient at the exact kink is (0, 0); the gradient is (-1, +1)
    only strictly inside the margin.
    """
    s_pos, s_neg = float(s_pos), float(s_neg)
    _require_finite_scalars(s_pos=s_pos, s_neg=s_neg)
    slack = cfg.margin - (s_pos - s_neg)
    if slack > 0:
        return LossOutput(slack, np.array([-1.0, 1.0]))
    return LossOutput(0.0, np.zeros(2))


def info_nce(scored: ScoredList) -> LossOutput:
    """Listwise softmax cross-entropy of the labeled positives.

    value = -sum_i y_i log(softmax(s)_i) via max-shifted log-sum-exp;
    grad_i = (sum_j y_j) * softmax(s)_i - y_i.
    """
    if scored.labels is None:
        raise InvalidInputError(f"info_nce needs labels on query {scored.query_id!r}")
    s = np.asarray(scored.scores, dtype=float)
    y = np.asarray(scored.labels, dtype=float)
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("info_nce scores must be finite")
    total_pos = y.sum()
    if total_pos == 0:
        raise InvalidInputError(f"info_nce needs at least one positive label on query {scored.query_id!r}")
    m = s.max()
    lse = m + math.log(np.exp(s - m).sum())
    value = float((y * (lse - s)).sum())
    softmax = np.exp(s - lse)
    grad = total_pos * softmax - y
    # exact log-sum-exp never undershoots any score, but guard rounding
    return LossOutput(max(value, 0.0), grad)


def margin_mse(triplet: DistillTriplet, s_pos: float, s_neg: float) -> LossOutput:
    """Squared error between the student margin and the teacher margin.

    With d = (s_pos - s_neg) - teacher_margin: value = d^2, grad = (2d, -2d).
    """
    s_pos, s_neg = float(s_pos), float(s_neg)
    _require_finite_scalars(s_pos=s_pos, s_neg=s_neg)
    d = (s_pos - s_neg) - triplet.teacher_margin
    return LossOutput(d * d, np.array([2.0 * d, -2.0 * d]))


def distill_ranknet(scores_in_teacher_order) -> LossOutput:
    """All-pairs RankNet penalty against the teacher's ordering.

    Input position i holds the student score of the teacher's rank-(i+1)
    passage. value = sum_{i<j} softplus(s_j - s_i), which decreases as the
    student agrees with the teacher and vanishes under saturated agreement.
    """
    s = np.asarray(scores_in_teacher_order, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise InvalidInputError(f"distill_ranknet needs at least 2 scores, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("distill_ranknet scores must be finite")
    diff = s[None, :] - s[:, None]  # diff[i, j] = s_j - s_i
    upper = np.triu_indices(s.size, k=1)
    value = float(_softplus(diff[upper]).sum())
    sig = _sigmoid(diff)
    w = np.zeros_like(sig)
    w[upper] = sig[upper]
    # pair (i, j): d/ds_j = sigmoid(s_j - s_i), d/ds_i = -sigmoid(s_j - s_i)
    grad = w.sum(axis=0) - w.sum(axis=1)
    return LossOutput(value, grad)


def soft_rank(scores, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Differentiable ranks: r_i = 1 + sum_{j != i} sigmoid((s_j - s_i) / T).

    Higher-scored competitors push a rank toward n, so the best score
    approaches rank 1 and sum_i r_i = n(n+1)/2 holds exactly for every
    temperature.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size < 1:
        raise InvalidInputError(f"soft_rank needs a non-empty score vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("soft_rank scores must be finite")
    diff = (s[None, :] - s[:, None]) / cfg.temperature  # diff[i, j] = (s_j - s_i) / T
    sig = _sigmoid(diff)
    np.fill_diagonal(sig, 0.0)
    return 1.0 + sig.sum(axis=1)


def adr_mse(scores_in_teacher_order, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Rank-weighted MSE between teacher ranks and student soft ranks.

    With teacher rank i = position + 1 and weight w_i = 1 / log2(i + 1):
    value = (1/n) sum_i w_i (i - r_i)^2, where r_i is the soft rank of
    score i. The top of the teacher's list carries the largest weight.
    """
    s = np.asarray(scores_in_teacher_order, dtype=float)
    if s.ndim != 1 or s.size < 1:
        raise InvalidInputError(f"adr_mse needs a non-empty score vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("adr_mse scores must be finite")
    n = s.size
    t = cfg.temperature
    ranks = np.arange(1, n + 1, dtype=float)
    weights = 1.0 / np.log2(ranks + 1.0)
    r = soft_rank(s, cfg)
    resid = ranks - r
    value = float((weights * resid * resid).sum() / n)

    # dL/dr_i, then chain through r: with P[i, j] = sigmoid'((s_j - s_i)/T)/T
    # (symmetric, zero diagonal), dL/ds_k = sum_i (g_i - g_k) P[i, k].
    g = (2.0 / n) * weights * (r - ranks)
    diff = (s[None, :] - s[:, None]) / t
    sig = _sigmoid(diff)
    p = sig * (1.0 - sig) / t
    np.fill_diagonal(p, 0.0)
    grad = p @ g - g * p.sum(axis=1)
    return LossOutput(value, grad)


@dataclass(frozen=True)
class TrainingBatch:
    """One query's supervision for a single objective.

    ``scored`` always carries the student scores (and labels when the
    objective is supervised); ``triplet`` adds teacher margins for
    margin_mse; ``teacher`` adds the teacher ordering for the listwise
    distillation objectives.
    """

    scored: ScoredList
    triplet: DistillTriplet | None = None
    teacher: TeacherRanking | None = None


def _describe_batch(batch: TrainingBatch) -> str:
    parts = [f"{len(batch.scored)} passages"]
    parts.append("with labels" if batch.scored.labels is not None else "without labels")
    if batch.triplet is not None:
        parts.append("with teacher margins")
    if batch.teacher is not None:
        parts.append("with teacher ordering")
    return ", ".join(parts)


def _labeled_pair(name: str, batch: TrainingBatch) -> tuple[int, int]:
    scored = batch.scored
    if scored.labels is None or len(scored) != 2:
        raise DispatchError(f"{name} expects a labeled (positive, negative) pair; got {_describe_batch(batch)}")
    if sorted(scored.labels) != [0, 1]:
        raise DispatchError(f"{name} expects exactly one positive and one negative; got labels {scored.labels}")
    pos = scored.labels.index(1)
    return pos, 1 - pos


def _teacher_order_indices(name: str, batch: TrainingBatch) -> list[int]:
    scored = batch.scored
    if batch.teacher is None:
        raise DispatchError(f"{name} expects a teacher-ordered list; got {_describe_batch(batch)}")
    if len(batch.teacher) != len(scored):
        raise DispatchError(
            f"{name}: teacher ranking covers {len(batch.teacher)} passages but the list has {len(scored)}"
        )
    index_of = {pid: i for i, pid in enumerate(scored.passage_ids)}
    try:
        return [index_of[pid] for pid in batch.teacher.ordered_ids]
    except KeyError as missing:
        raise DispatchError(f"{name}: teacher ranking names unknown passage {missing.args[0]!r}") from None


def loss_by_name(name: str, batch: TrainingBatch, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Dispatch to one of the six objectives by name.

    The returned gradient is always aligned with ``batch.scored.scores``,
    even for objectives that internally consume scores in teacher order.
    """
    scored = batch.scored
    if name == "bce":
        pos, neg = _labeled_pair(name, batch)
        out = bce_pair(scored.scores[pos], scored.scores[neg])
    elif name == "hinge":
        pos, neg = _labeled_pair(name, batch)
        out = hinge_pair(scored.scores[pos], scored.scores[neg], cfg)
    elif name == "infonce":
        if scored.labels is None:
            raise DispatchError(f"infonce expects a labeled list; got {_describe_batch(batch)}")
        return info_nce(scored)
    elif name == "margin_mse":
        if batch.triplet is None:
            raise DispatchError(f"margin_mse expects teacher margins; got {_describe_batch(batch)}")
        index_of = {pid: i for i, pid in enumerate(scored.passage_ids)}
        if batch.triplet.pos_id not in index_of or batch.triplet.neg_id not in index_of:
            raise DispatchError(
                f"margin_mse: triplet ids ({batch.triplet.pos_id!r}, {batch.triplet.neg_id!r}) "
                f"not both present in the scored list"
            )
        pos, neg = index_of[batch.triplet.pos_id], index_of[batch.triplet.neg_id]
        out = margin_mse(batch.triplet, scored.scores[pos], scored.scores[neg])
    elif name in TEACHER_ORDERED_OBJECTIVES:
        order = _teacher_order_indices(name, batch)
        s = np.asarray(scored.scores, dtype=float)[order]
        out = distill_ranknet(s) if name == "distill_ranknet" else adr_mse(s, cfg)
        grad = np.zeros(len(scored))
        grad[order] = out.grad
        return LossOutput(out.value, grad)
    else:
        raise DispatchError(f"unknown objective {name!r}; expected one of {', '.join(OBJECTIVES)}")

    # pairwise path: scatter the 2-entry gradient back to list positions
    grad = np.zeros(len(scored))
    grad[pos], grad[neg] = out.grad[0], out.grad[1]
    return LossOutput(out.value, grad)
