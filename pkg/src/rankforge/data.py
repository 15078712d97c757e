"""Training data assembly: planted synthetic problems, file-backed
datasets, and per-objective batch sampling.

A planted problem draws candidate feature vectors around a hidden
linear scorer. Each query additionally receives a random score offset
along the hidden direction (``query_shift``): the offset cancels inside
any within-query comparison, so relative objectives see it not at all,
while pointwise classification has to average it out. Relevance grades
come from each query's teacher-score order (top ``grade2`` candidates
at grade 2, next ``grade1`` at grade 1), which makes teacher-order
recovery directly measurable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidInputError, JudgedPool, labels_from_grades
from .io import (
    DataConfig,
    ExperimentConfig,
    PlantedSpec,
    parse_features,
    parse_qrels,
    parse_ranked_lists,
    parse_triplets,
    write_features,
    write_qrels_like,
    write_ranked_lists,
    write_triplets,
)
from .scorer import ScorerParams, score_batch


@dataclass(frozen=True)
class QueryData:
    """One query's candidates: ids, features, grades, optional teacher scores."""

    query_id: str
    passage_ids: tuple[str, ...]
    features: np.ndarray  # (n, d)
    grades: tuple[int, ...]
    teacher_scores: np.ndarray | None = None

    def __post_init__(self):
        features = np.array(self.features, dtype=float, copy=True)
        features.flags.writeable = False
        object.__setattr__(self, "features", features)
        if self.teacher_scores is not None:
            t = np.array(self.teacher_scores, dtype=float, copy=True)
            t.flags.writeable = False
            object.__setattr__(self, "teacher_scores", t)
        n = len(self.passage_ids)
        if self.features.shape[0] != n or len(self.grades) != n:
            raise InvalidInputError(f"query {self.query_id!r}: misaligned candidate arrays")
        if self.teacher_scores is not None and self.teacher_scores.size != n:
            raise InvalidInputError(f"query {self.query_id!r}: misaligned teacher scores")

    def teacher_order(self) -> tuple[str, ...]:
        """Candidate ids by descending teacher score, ties by ascending id."""
        if self.teacher_scores is None:
            raise InvalidInputError(f"query {self.query_id!r} has no teacher scores")
        order = sorted(range(len(self.passage_ids)),
                       key=lambda i: (-self.teacher_scores[i], self.passage_ids[i]))
        return tuple(self.passage_ids[i] for i in order)


@dataclass(frozen=True)
class RankingDataset:
    """A set of queries plus whatever supervision the files provided."""

    queries: tuple[QueryData, ...]
    dim: int
    triplets: tuple = ()          # DistillTriplet supervision, file mode
    rankings: dict | None = None  # query_id -> TeacherRanking, file mode

    def qrels(self) -> JudgedPool:
        return JudgedPool({q.query_id: dict(zip(q.passage_ids, q.grades)) for q in self.queries})


@dataclass(frozen=True)
class QuerySample:
    """One query's slice of a training batch, shaped for its objective.

    For teacher-ordered objectives ``passage_ids`` (and the feature rows)
    are already in teacher order.
    """

    query_id: str
    passage_ids: tuple[str, ...]
    features: np.ndarray
    labels: tuple[int, ...] | None = None
    teacher_pos: float | None = None
    teacher_neg: float | None = None
    teacher_order: tuple[str, ...] | None = None


def make_planted(spec: PlantedSpec) -> tuple[RankingDataset, RankingDataset]:
    """Generate (train, validation) datasets from a hidden linear scorer."""
    rng = np.random.default_rng(spec.seed)
    direction = rng.normal(size=spec.dim)
    direction /= np.linalg.norm(direction)

    def make_queries(count: int, prefix: str) -> tuple[QueryData, ...]:
        queries = []
        for qi in range(count):
            base = rng.normal(size=(spec.candidates, spec.dim))
            shift = rng.normal() * spec.query_shift
            features = base + shift * direction
            teacher = features @ direction
            if spec.teacher_noise > 0:
                teacher = teacher + rng.normal(size=spec.candidates) * spec.teacher_noise
            order = np.argsort(-teacher, kind="stable")
            grades = np.zeros(spec.candidates, dtype=int)
            grades[order[: spec.grade2]] = 2
            grades[order[spec.grade2 : spec.grade2 + spec.grade1]] = 1
            qid = f"{prefix}{qi:05d}"
            ids = tuple(f"d{j:03d}" for j in range(spec.candidates))
            queries.append(QueryData(qid, ids, features, tuple(int(g) for g in grades), teacher))
        return tuple(queries)

    train = RankingDataset(make_queries(spec.train_queries, "train_q"), spec.dim)
    val = RankingDataset(make_queries(spec.val_queries, "val_q"), spec.dim)
    return train, val


def load_datasets(config: ExperimentConfig) -> tuple[RankingDataset, RankingDataset]:
    """Materialize (train, validation) datasets from the config's data block."""
    if config.data.planted is not None:
        return make_planted(config.data.planted)
    return _load_file_datasets(config.data)


def _load_file_datasets(data: DataConfig) -> tuple[RankingDataset, RankingDataset]:
    with open(data.features, encoding="utf-8") as fh:
        table = parse_features(fh)
    if not table:
        raise InvalidInputError(f"feature file {data.features} is empty")
    with open(data.qrels, encoding="utf-8") as fh:
        pool = parse_qrels(fh)
    val_ids = set(Path(data.validation_queries).read_text(encoding="utf-8").split())
    unknown = val_ids - set(table)
    if unknown:
        raise InvalidInputError(f"validation query {sorted(unknown)[0]!r} has no features")

    dim = next(iter(next(iter(table.values())).values())).size

    def build(qids) -> tuple[QueryData, ...]:
        queries = []
        for qid in qids:
            docids = tuple(sorted(table[qid]))
            features = np.vstack([table[qid][d] for d in docids])
            grades = tuple(pool.grade(qid, d) for d in docids)
            queries.append(QueryData(qid, docids, features, grades))
        return tuple(queries)

    train_qids = [q for q in table if q not in val_ids]
    val_qids = [q for q in table if q in val_ids]
    if not train_qids or not val_qids:
        raise InvalidInputError("both the training and validation splits must be non-empty")

    triplets = ()
    if data.triplets is not None:
        with open(data.triplets, encoding="utf-8") as fh:
            all_triplets = parse_triplets(fh)
        kept = []
        for t in all_triplets:
            if t.query_id in val_ids:
                continue
            docs = table.get(t.query_id)
            if docs is None or t.pos_id not in docs or t.neg_id not in docs:
                raise InvalidInputError(
                    f"triplet ({t.query_id!r}, {t.pos_id!r}, {t.neg_id!r}) references unfeatured passages"
                )
            kept.append(t)
        triplets = tuple(kept)

    rankings = None
    if data.ranked_lists is not None:
        with open(data.ranked_lists, encoding="utf-8") as fh:
            parsed = parse_ranked_lists(fh)
        rankings = {}
        for r in parsed:
            if r.query_id in val_ids:
                continue
            docs = table.get(r.query_id, {})
            missing = [pid for pid in r.ordered_ids if pid not in docs]
            if missing:
                raise InvalidInputError(
                    f"ranking for query {r.query_id!r} references unfeatured passage {missing[0]!r}"
                )
            rankings[r.query_id] = r

    train = RankingDataset(build(train_qids), dim, triplets=triplets, rankings=rankings)
    val = RankingDataset(build(val_qids), dim)
    return train, val


def materialize(train: RankingDataset, val: RankingDataset, out_dir: str | Path,
                include_teacher: bool = True) -> dict[str, str]:
    """Write a dataset pair to the canonical file formats.

    Returns the path map suitable for an experiment config's data block.
    Teacher supervision (triplets from one positive/negative pair per
    query, plus full ranked lists) is derived from teacher scores when
    present.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": str(out / "features.tsv"),
        "qrels": str(out / "qrels.txt"),
        "validation_queries": str(out / "validation_queries.txt"),
    }
    everything = list(train.queries) + list(val.queries)
    with open(paths["features"], "w", encoding="utf-8") as fh:
        write_features({q.query_id: dict(zip(q.passage_ids, q.features)) for q in everything}, fh)
    with open(paths["qrels"], "w", encoding="utf-8") as fh:
        write_qrels_like(
            ((q.query_id, pid, g) for q in everything for pid, g in zip(q.passage_ids, q.grades)), fh
        )
    Path(paths["validation_queries"]).write_text(
        "".join(q.query_id + "\n" for q in val.queries), encoding="utf-8"
    )
    if include_teacher and all(q.teacher_scores is not None for q in train.queries):
        paths["triplets"] = str(out / "triplets.tsv")
        paths["ranked_lists"] = str(out / "ranked_lists.tsv")
        from .core import DistillTriplet, TeacherRanking

        triplets, rankings = [], []
        for q in train.queries:
            labels = labels_from_grades(q.grades)
            pos = [i for i, y in enumerate(labels) if y == 1]
            neg = [i for i, y in enumerate(labels) if y == 0]
            if pos and neg:
                i, j = pos[0], neg[0]
                triplets.append(DistillTriplet(q.query_id, q.passage_ids[i], q.passage_ids[j],
                                               float(q.teacher_scores[i]), float(q.teacher_scores[j])))
            rankings.append(TeacherRanking(q.query_id, q.teacher_order()))
        with open(paths["triplets"], "w", encoding="utf-8") as fh:
            write_triplets(triplets, fh)
        with open(paths["ranked_lists"], "w", encoding="utf-8") as fh:
            write_ranked_lists(rankings, fh)
    return paths


# --- per-objective batch samplers ------------------------------------------


class _LabeledQuerySampler:
    """Shared machinery for objectives supervised by binarized grades."""

    def __init__(self, dataset: RankingDataset, threshold: int):
        self.entries = []
        for q in dataset.queries:
            labels = labels_from_grades(q.grades, threshold)
            pos = tuple(i for i, y in enumerate(labels) if y == 1)
            neg = tuple(i for i, y in enumerate(labels) if y == 0)
            if pos and neg:
                self.entries.append((q, pos, neg))
        if not self.entries:
            raise InvalidInputError(
                "no trainable queries: every query needs at least one positive and one negative"
            )

    def pick_query(self, rng):
        return self.entries[int(rng.integers(len(self.entries)))]


class PairSampler(_LabeledQuerySampler):
    """(positive, negative) pairs for bce and hinge."""

    def __init__(self, dataset, threshold, batch_docs):
        super().__init__(dataset, threshold)
        self.pairs_per_batch = max(1, batch_docs // 2)

    def sample(self, rng) -> list[QuerySample]:
        samples = []
        for _ in range(self.pairs_per_batch):
            q, pos, neg = self.pick_query(rng)
            i = pos[int(rng.integers(len(pos)))]
            j = neg[int(rng.integers(len(neg)))]
            samples.append(QuerySample(
                q.query_id, (q.passage_ids[i], q.passage_ids[j]),
                q.features[[i, j]], labels=(1, 0),
            ))
        return samples


class InfoNceSampler(_LabeledQuerySampler):
    """One positive plus up to ``negatives`` sampled negatives per query."""

    def __init__(self, dataset, threshold, batch_docs, negatives):
        super().__init__(dataset, threshold)
        self.negatives = negatives
        self.queries_per_batch = max(1, batch_docs // (1 + negatives))

    def sample(self, rng) -> list[QuerySample]:
        samples = []
        for _ in range(self.queries_per_batch):
            q, pos, neg = self.pick_query(rng)
            i = pos[int(rng.integers(len(pos)))]
            take = min(self.negatives, len(neg))
            picked = rng.choice(len(neg), size=take, replace=False)
            idx = [i] + [neg[int(j)] for j in picked]
            samples.append(QuerySample(
                q.query_id, tuple(q.passage_ids[j] for j in idx),
                q.features[idx], labels=(1,) + (0,) * take,
            ))
        return samples


class PlantedMarginSampler(_LabeledQuerySampler):
    """MarginMSE pairs with teacher scores read off the planted scorer."""

    def __init__(self, dataset, threshold, batch_docs):
        super().__init__(dataset, threshold)
        if any(q.teacher_scores is None for q, _, _ in self.entries):
            raise InvalidInputError("margin_mse needs teacher scores or a triplet file")
        self.pairs_per_batch = max(1, batch_docs // 2)

    def sample(self, rng) -> list[QuerySample]:
        samples = []
        for _ in range(self.pairs_per_batch):
            q, pos, neg = self.pick_query(rng)
            i = pos[int(rng.integers(len(pos)))]
            j = neg[int(rng.integers(len(neg)))]
            samples.append(QuerySample(
                q.query_id, (q.passage_ids[i], q.passage_ids[j]), q.features[[i, j]],
                teacher_pos=float(q.teacher_scores[i]), teacher_neg=float(q.teacher_scores[j]),
            ))
        return samples


class TripletFileSampler:
    """MarginMSE supervision drawn from a parsed triplet file."""

    def __init__(self, dataset: RankingDataset, batch_docs: int):
        if not dataset.triplets:
            raise InvalidInputError("margin_mse needs a non-empty triplet file")
        self.by_query = {q.query_id: q for q in dataset.queries}
        self.triplets = dataset.triplets
        self.pairs_per_batch = max(1, batch_docs // 2)

    def sample(self, rng) -> list[QuerySample]:
        samples = []
        for _ in range(self.pairs_per_batch):
            t = self.triplets[int(rng.integers(len(self.triplets)))]
            q = self.by_query[t.query_id]
            i = q.passage_ids.index(t.pos_id)
            j = q.passage_ids.index(t.neg_id)
            samples.append(QuerySample(
                t.query_id, (t.pos_id, t.neg_id), q.features[[i, j]],
                teacher_pos=t.teacher_pos, teacher_neg=t.teacher_neg,
            ))
        return samples


class TeacherListSampler:
    """Whole teacher-ordered lists; one query per batch.

    This mirrors the training shape of the listwise distillation
    objectives, where a batch is a single query with its full ranked
    list.
    """

    def __init__(self, dataset: RankingDataset, min_length: int):
        self.entries = []
        for q in dataset.queries:
            if dataset.rankings is not None:
                ranking = dataset.rankings.get(q.query_id)
                if ranking is None:
                    continue
                ordered = ranking.ordered_ids
            elif q.teacher_scores is not None:
                ordered = q.teacher_order()
            else:
                continue
            if len(ordered) < min_length:
                continue
            index_of = {pid: k for k, pid in enumerate(q.passage_ids)}
            rows = [index_of[pid] for pid in ordered]
            self.entries.append((q, ordered, rows))
        if not self.entries:
            raise InvalidInputError("no queries with a usable teacher ranking")

    def sample(self, rng) -> list[QuerySample]:
        q, ordered, rows = self.entries[int(rng.integers(len(self.entries)))]
        return [QuerySample(q.query_id, ordered, q.features[rows], teacher_order=ordered)]


def make_sampler(config: ExperimentConfig, dataset: RankingDataset):
    """Build the batch sampler matching the configured objective."""
    objective = config.objective
    threshold = config.positive_threshold
    batch_docs = config.optimizer.batch_docs
    if objective in ("bce", "hinge"):
        return PairSampler(dataset, threshold, batch_docs)
    if objective == "infonce":
        return InfoNceSampler(dataset, threshold, batch_docs, config.infonce_negatives)
    if objective == "margin_mse":
        if dataset.triplets:
            return TripletFileSampler(dataset, batch_docs)
        return PlantedMarginSampler(dataset, threshold, batch_docs)
    if objective in ("distill_ranknet", "adr_mse"):
        return TeacherListSampler(dataset, min_length=2 if objective == "distill_ranknet" else 1)
    raise InvalidInputError(f"unknown objective {objective!r}")


# --- evaluation helpers ------------------------------------------------------


def score_dataset(params: ScorerParams, dataset: RankingDataset):
    """Student-scored candidate lists for every query, as ScoredLists."""
    from .core import ScoredList

    runs = []
    for q in dataset.queries:
        scores = score_batch(params, q.features)
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError(f"non-finite student scores on query {q.query_id!r}")
        runs.append(ScoredList(q.query_id, q.passage_ids, tuple(float(s) for s in scores)))
    return runs


def kendall_to_teacher(params: ScorerParams, dataset: RankingDataset) -> float:
    """Mean per-query Kendall tau between student and teacher scores."""
    from .metrics import kendall_tau

    taus = []
    for q in dataset.queries:
        if q.teacher_scores is None:
            raise InvalidInputError(f"query {q.query_id!r} has no teacher scores")
        if len(q.passage_ids) < 2:
            continue
        taus.append(kendall_tau(score_batch(params, q.features), q.teacher_scores))
    if not taus:
        raise InvalidInputError("no queries with at least two candidates")
    return float(np.mean(taus))
