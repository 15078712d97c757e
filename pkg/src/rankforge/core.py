"""Domain types shared across the toolkit.

All types are immutable after construction and safe to share across
threads. Query and passage ids are opaque strings throughout; relevance
grades are non-negative integers with binary labels derived by a
configurable threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class RankforgeError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(RankforgeError, ValueError):
    """An operation received arguments violating its preconditions."""


class InvalidConfigError(RankforgeError, ValueError):
    """A configuration value is out of its valid range."""


def _as_float_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class ScoredList:
    """One query's candidate passages with student scores and optional binary labels."""

    query_id: str
    passage_ids: tuple[str, ...]
    scores: tuple[float, ...]
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "passage_ids", tuple(self.passage_ids))
        object.__setattr__(self, "scores", _as_float_tuple(self.scores))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        n = len(self.passage_ids)
        if n < 1:
            raise InvalidInputError("ScoredList needs at least one passage")
        if len(self.scores) != n:
            raise InvalidInputError(
                f"ScoredList length mismatch: {n} passage ids vs {len(self.scores)} scores"
            )
        if self.labels is not None:
            if len(self.labels) != n:
                raise InvalidInputError(
                    f"ScoredList length mismatch: {n} passage ids vs {len(self.labels)} labels"
                )
            if any(y not in (0, 1) for y in self.labels):
                raise InvalidInputError("ScoredList labels must be 0 or 1")
        if len(set(self.passage_ids)) != n:
            raise InvalidInputError(f"duplicate passage ids in list for query {self.query_id!r}")

    def __len__(self) -> int:
        return len(self.passage_ids)


@dataclass(frozen=True)
class DistillTriplet:
    """A (query, positive, negative) pair of passages with teacher scores for both sides."""

    query_id: str
    pos_id: str
    neg_id: str
    teacher_pos: float
    teacher_neg: float

    def __post_init__(self):
        if self.pos_id == self.neg_id:
            raise InvalidInputError(
                f"triplet for query {self.query_id!r} has pos_id == neg_id ({self.pos_id!r})"
            )
        if not (math.isfinite(self.teacher_pos) and math.isfinite(self.teacher_neg)):
            raise InvalidInputError("teacher scores must be finite")

    @property
    def teacher_margin(self) -> float:
        return self.teacher_pos - self.teacher_neg


@dataclass(frozen=True)
class TeacherRanking:
    """A teacher-ordered candidate list, best first; rank of ordered_ids[k] is k+1."""

    query_id: str
    ordered_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "ordered_ids", tuple(self.ordered_ids))
        if len(self.ordered_ids) < 1:
            raise InvalidInputError("TeacherRanking needs at least one passage")
        if len(set(self.ordered_ids)) != len(self.ordered_ids):
            raise InvalidInputError(
                f"duplicate passage ids in teacher ranking for query {self.query_id!r}"
            )

    def __len__(self) -> int:
        return len(self.ordered_ids)

    def rank_of(self, passage_id: str) -> int:
        """1-based teacher rank of a passage."""
        try:
            return self.ordered_ids.index(passage_id) + 1
        except ValueError:
            raise InvalidInputError(
                f"passage {passage_id!r} not in teacher ranking for query {self.query_id!r}"
            ) from None


@dataclass(frozen=True)
class JudgedPool:
    """Graded relevance judgments: query_id -> passage_id -> integer grade >= 0.

    ``duplicate_count`` records how many (query, passage) pairs were seen more
    than once at parse time (last value wins).
    """

    grades: dict[str, dict[str, int]]
    duplicate_count: int = 0

    def __post_init__(self):
        for qid, docs in self.grades.items():
            for docid, grade in docs.items():
                if not isinstance(grade, int) or grade < 0:
                    raise InvalidInputError(
                        f"grade for ({qid!r}, {docid!r}) must be a non-negative integer, got {grade!r}"
                    )

    def queries(self) -> tuple[str, ...]:
        return tuple(self.grades.keys())

    def grade(self, query_id: str, passage_id: str) -> int:
        """Grade of a (query, passage) pair; unjudged pairs are grade 0."""
        return self.grades.get(query_id, {}).get(passage_id, 0)

    def relevant_ids(self, query_id: str, threshold: int = 1) -> set[str]:
        """Passages judged at or above ``threshold`` for a query."""
        return {d for d, g in self.grades.get(query_id, {}).items() if g >= threshold}


def labels_from_grades(grades, threshold: int = 1) -> tuple[int, ...]:
    """Binarize integer relevance grades: positive iff grade >= threshold.

    The threshold is configurable because graded benchmarks admit more than
    one binarization convention; grade >= 1 is the default.
    """
    if threshold < 1:
        raise InvalidInputError(f"binarization threshold must be >= 1, got {threshold}")
    return tuple(1 if g >= threshold else 0 for g in grades)


@dataclass(frozen=True)
class LossOutput:
    """A loss value together with its analytic gradient w.r.t. the input scores."""

    value: float
    grad: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        grad = np.array(self.grad, dtype=float, copy=True)
        grad.flags.writeable = False
        object.__setattr__(self, "grad", grad)
        if not math.isfinite(self.value):
            raise InvalidInputError(f"loss value is not finite: {self.value}")
        if self.value < 0:
            raise InvalidInputError(f"loss value is negative: {self.value}")
        if not np.all(np.isfinite(self.grad)):
            raise InvalidInputError("loss gradient contains non-finite entries")


@dataclass(frozen=True)
class RankMatrix:
    """Per-instance scores for k methods: an N x k grid plus the two name axes."""

    method_names: tuple[str, ...]
    instance_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "method_names", tuple(self.method_names))
        object.__setattr__(self, "instance_names", tuple(self.instance_names))
        values = np.array(self.values, dtype=float, copy=True)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        k, n = len(self.method_names), len(self.instance_names)
        if len(set(self.method_names)) != k:
            raise InvalidInputError("duplicate method names")
        if self.values.shape != (n, k):
            raise InvalidInputError(
                f"matrix shape {self.values.shape} does not match {n} instances x {k} methods"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("matrix contains non-finite entries")

    @property
    def num_methods(self) -> int:
        return len(self.method_names)

    @property
    def num_instances(self) -> int:
        return len(self.instance_names)


@dataclass(frozen=True)
class LossConfig:
    """Knobs shared by the loss family: soft-rank temperature and hinge margin."""

    temperature: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidConfigError(f"temperature must be > 0, got {self.temperature}")
        if not (math.isfinite(self.margin) and self.margin > 0):
            raise InvalidConfigError(f"margin must be > 0, got {self.margin}")
