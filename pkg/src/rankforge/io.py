"""Bit-exact text formats: TREC qrels and runs, distillation triplets,
teacher ranked lists, per-passage feature vectors, scorer checkpoints,
and the declarative experiment config.

Everything is line-oriented plain text with decimal number
serialization, so round-trips are byte-exact across platforms. Both LF
and CRLF line endings are accepted on input. All parse errors carry
1-based line numbers.

Formats:

    qrels:        qid 0 docid grade                 (whitespace-separated)
    run:          qid Q0 docid rank score tag       (score at 6 decimals)
    triplets:     qid <TAB> pos <TAB> neg <TAB> teacher_pos <TAB> teacher_neg
    ranked lists: qid <TAB> id1 <TAB> id2 ...       (best first)
    features:     qid docid v1 v2 ... vd            (whitespace-separated)
    checkpoints:  key/value header, then one parameter per line at 17
                  significant digits
    config:       one YAML document per experiment, strict keys
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import yaml

from .core import DistillTriplet, InvalidConfigError, JudgedPool, RankforgeError, ScoredList, TeacherRanking
from .losses import OBJECTIVES
from .scorer import KINDS, ScorerParams

RUN_TAG = "rankforge"


class ParseError(RankforgeError, ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(InvalidConfigError):
    """Invalid or incomplete experiment configuration."""


class CheckpointError(RankforgeError, ValueError):
    """Unreadable or mismatched checkpoint file."""


def _lines(stream: TextIO | str) -> Iterable[tuple[int, str]]:
    """Numbered lines with line endings stripped; blank lines skipped."""
    if isinstance(stream, str):
        raw = stream.splitlines()
    else:
        raw = stream.read().splitlines()
    for i, line in enumerate(raw, start=1):
        if line.strip():
            yield i, line


def parse_qrels(stream: TextIO | str) -> JudgedPool:
    """Parse TREC qrels lines `qid 0 docid grade`; duplicate pairs last-win."""
    grades: dict[str, dict[str, int]] = {}
    duplicates = 0
    for lineno, line in _lines(stream):
        fields = line.split()
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields `qid 0 docid grade`, got {len(fields)}", lineno)
        qid, _, docid, grade_text = fields
        try:
            grade = int(grade_text)
        except ValueError:
            raise ParseError(f"grade {grade_text!r} is not an integer", lineno) from None
        if grade < 0:
            raise ParseError(f"grade must be >= 0, got {grade}", lineno)
        per_query = grades.setdefault(qid, {})
        if docid in per_query:
            duplicates += 1
        per_query[docid] = grade
    return JudgedPool(grades, duplicate_count=duplicates)


def parse_run(stream: TextIO | str) -> list[ScoredList]:
    """Parse a TREC run `qid Q0 docid rank score tag` into per-query lists.

    Ranks must be 1..n contiguous within each query; list order follows
    rank order.
    """
    per_query: dict[str, list[tuple[int, str, float, int]]] = {}
    for lineno, line in _lines(stream):
        fields = line.split()
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields `qid Q0 docid rank score tag`, got {len(fields)}", lineno)
        qid, _, docid, rank_text, score_text, _ = fields
        try:
            rank = int(rank_text)
        except ValueError:
            raise ParseError(f"rank {rank_text!r} is not an integer", lineno) from None
        try:
            value = float(score_text)
        except ValueError:
            raise ParseError(f"score {score_text!r} is not a number", lineno) from None
        if not math.isfinite(value):
            raise ParseError(f"score {score_text!r} is not finite", lineno)
        per_query.setdefault(qid, []).append((rank, docid, value, lineno))
    runs = []
    for qid, rows in per_query.items():
        rows.sort(key=lambda r: r[0])
        for position, (rank, _, _, lineno) in enumerate(rows, start=1):
            if rank != position:
                raise ParseError(
                    f"query {qid!r} has non-contiguous ranks (expected {position}, got {rank})", lineno
                )
        runs.append(ScoredList(qid, tuple(r[1] for r in rows), tuple(r[2] for r in rows)))
    return runs


def write_run(runs: Iterable[ScoredList], stream: TextIO, tag: str = RUN_TAG) -> None:
    """Write per-query ordered lists as a TREC run, scores at 6 decimals."""
    for scored in runs:
        for rank, (docid, value) in enumerate(zip(scored.passage_ids, scored.scores), start=1):
            stream.write(f"{scored.query_id} Q0 {docid} {rank} {value:.6f} {tag}\n")


def write_qrels_like(rows, stream: TextIO) -> None:
    """Write `qid 0 docid grade` lines from (qid, docid, grade) rows."""
    for qid, docid, grade in rows:
        stream.write(f"{qid} 0 {docid} {int(grade)}\n")


def parse_triplets(stream: TextIO | str) -> list[DistillTriplet]:
    """Parse tab-separated `qid pos neg teacher_pos teacher_neg` lines."""
    triplets = []
    for lineno, line in _lines(stream):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 5:
            raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}", lineno)
        qid, pos_id, neg_id, pos_text, neg_text = fields
        try:
            teacher_pos, teacher_neg = float(pos_text), float(neg_text)
        except ValueError:
            raise ParseError(f"teacher scores {pos_text!r}/{neg_text!r} are not numbers", lineno) from None
        if not (math.isfinite(teacher_pos) and math.isfinite(teacher_neg)):
            raise ParseError("teacher scores must be finite", lineno)
        if pos_id == neg_id:
            raise ParseError(f"pos_id == neg_id ({pos_id!r})", lineno)
        triplets.append(DistillTriplet(qid, pos_id, neg_id, teacher_pos, teacher_neg))
    return triplets


def write_triplets(triplets: Iterable[DistillTriplet], stream: TextIO) -> None:
    for t in triplets:
        stream.write(f"{t.query_id}\t{t.pos_id}\t{t.neg_id}\t{t.teacher_pos:.6f}\t{t.teacher_neg:.6f}\n")


def parse_ranked_lists(stream: TextIO | str) -> list[TeacherRanking]:
    """Parse `qid <TAB> id1 <TAB> id2 ...` teacher rankings, best first."""
    rankings = []
    for lineno, line in _lines(stream):
        fields = line.rstrip("\r").split("\t")
        if len(fields) < 3:
            raise ParseError("ranked list needs a qid and at least 2 passage ids", lineno)
        qid, ids = fields[0], fields[1:]
        if len(set(ids)) != len(ids):
            raise ParseError(f"duplicate passage id in ranking for query {qid!r}", lineno)
        rankings.append(TeacherRanking(qid, tuple(ids)))
    return rankings


def write_ranked_lists(rankings: Iterable[TeacherRanking], stream: TextIO) -> None:
    for r in rankings:
        stream.write(r.query_id + "\t" + "\t".join(r.ordered_ids) + "\n")


def parse_features(stream: TextIO | str) -> dict[str, dict[str, np.ndarray]]:
    """Parse `qid docid v1 ... vd` rows into qid -> docid -> vector.

    All rows must share one dimension; duplicate (qid, docid) rows are
    rejected.
    """
    table: dict[str, dict[str, np.ndarray]] = {}
    dim = None
    for lineno, line in _lines(stream):
        fields = line.split()
        if len(fields) < 3:
            raise ParseError("expected `qid docid v1 ...` with at least one feature", lineno)
        qid, docid = fields[0], fields[1]
        try:
            vec = np.array([float(v) for v in fields[2:]])
        except ValueError:
            raise ParseError("feature values must be numbers", lineno) from None
        if not np.all(np.isfinite(vec)):
            raise ParseError("feature values must be finite", lineno)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ParseError(f"feature dimension {vec.size} != {dim} seen earlier", lineno)
        per_query = table.setdefault(qid, {})
        if docid in per_query:
            raise ParseError(f"duplicate features for ({qid!r}, {docid!r})", lineno)
        per_query[docid] = vec
    return table


def write_features(table: dict[str, dict[str, np.ndarray]], stream: TextIO) -> None:
    for qid, docs in table.items():
        for docid, vec in docs.items():
            values = " ".join(format(float(v), ".17g") for v in vec)
            stream.write(f"{qid} {docid} {values}\n")


# --- experiment configuration ---------------------------------------------


@dataclass(frozen=True)
class ScorerSpec:
    kind: str = "linear"
    dim: int = 16
    hidden: int = 0


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-5
    batch_docs: int = 32
    warmup_steps: int = 5000
    max_steps: int = 200_000
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class PlantedSpec:
    """Synthetic ranking problem: a hidden linear scorer plus noise knobs."""

    dim: int = 16
    train_queries: int = 500
    val_queries: int = 100
    candidates: int = 20
    query_shift: float = 2.0
    teacher_noise: float = 0.0
    grade2: int = 1
    grade1: int = 4
    seed: int = 7


@dataclass(frozen=True)
class DataConfig:
    planted: PlantedSpec | None = None
    features: str | None = None
    qrels: str | None = None
    triplets: str | None = None
    ranked_lists: str | None = None
    validation_queries: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str
    data: DataConfig
    loss_temperature: float = 1.0
    loss_margin: float = 1.0
    scorer: ScorerSpec = ScorerSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    validate_every: int = 1000
    ndcg_k: int = 10
    positive_threshold: int = 1
    infonce_negatives: int = 7


_TOP_KEYS = {"objective", "loss", "scorer", "optimizer", "data", "seeds",
             "validate_every", "ndcg_k", "positive_threshold", "infonce_negatives"}
_LOSS_KEYS = {"temperature", "margin"}
_SCORER_KEYS = {"kind", "dim", "hidden"}
_OPT_KEYS = {"lr", "batch_docs", "warmup_steps", "max_steps", "weight_decay",
             "beta1", "beta2", "eps"}
_DATA_KEYS = {"planted", "features", "qrels", "triplets", "ranked_lists", "validation_queries"}
_PLANTED_KEYS = {"dim", "train_queries", "val_queries", "candidates", "query_shift",
                 "teacher_noise", "grade2", "grade1", "seed"}


def _reject_unknown(section: str, mapping: dict, allowed: set[str]):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {section}")


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a mapping")
    return value


def _positive(section: str, key: str, value) -> float:
    v = float(value)
    if not (math.isfinite(v) and v > 0):
        raise ConfigError(f"{section}.{key} must be > 0, got {value}")
    return v


def load_config(path: str | Path, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Load and strictly validate a YAML experiment config.

    Unknown keys anywhere are fatal; missing optional keys fall back to
    the documented defaults. Relative data paths resolve against the
    config file's directory (or ``base_dir`` when given), and referenced
    paths must exist at load time.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    base = Path(base_dir) if base_dir is not None else path.parent
    return config_from_dict(raw, base)


def config_from_dict(raw: dict, base_dir: Path) -> ExperimentConfig:
    _reject_unknown("config", raw, _TOP_KEYS)
    if "objective" not in raw:
        raise ConfigError("missing required key 'objective'")
    objective = str(raw["objective"])
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; expected one of {', '.join(OBJECTIVES)}")

    loss = _section(raw, "loss")
    _reject_unknown("loss", loss, _LOSS_KEYS)
    temperature = _positive("loss", "temperature", loss.get("temperature", 1.0))
    margin = _positive("loss", "margin", loss.get("margin", 1.0))

    scorer_raw = _section(raw, "scorer")
    _reject_unknown("scorer", scorer_raw, _SCORER_KEYS)
    kind = str(scorer_raw.get("kind", "linear"))
    if kind not in KINDS:
        raise ConfigError(f"unknown scorer.kind {kind!r}; expected one of {', '.join(KINDS)}")
    dim = int(scorer_raw.get("dim", 16))
    hidden = int(scorer_raw.get("hidden", 8 if kind == "mlp1" else 0))
    if dim < 1:
        raise ConfigError(f"scorer.dim must be >= 1, got {dim}")
    if kind == "mlp1" and hidden < 1:
        raise ConfigError(f"scorer.hidden must be >= 1 for mlp1, got {hidden}")

    opt_raw = _section(raw, "optimizer")
    _reject_unknown("optimizer", opt_raw, _OPT_KEYS)
    optimizer = OptimizerConfig(
        lr=_positive("optimizer", "lr", opt_raw.get("lr", 1e-5)),
        batch_docs=int(opt_raw.get("batch_docs", 32)),
        warmup_steps=int(opt_raw.get("warmup_steps", 5000)),
        max_steps=int(opt_raw.get("max_steps", 200_000)),
        weight_decay=float(opt_raw.get("weight_decay", 0.0)),
        beta1=float(opt_raw.get("beta1", 0.9)),
        beta2=float(opt_raw.get("beta2", 0.999)),
        eps=_positive("optimizer", "eps", opt_raw.get("eps", 1e-8)),
    )
    if optimizer.batch_docs < 2:
        raise ConfigError(f"optimizer.batch_docs must be >= 2, got {optimizer.batch_docs}")
    if optimizer.warmup_steps < 1:
        raise ConfigError(f"optimizer.warmup_steps must be >= 1, got {optimizer.warmup_steps}")
    if optimizer.max_steps < 0:
        raise ConfigError(f"optimizer.max_steps must be >= 0, got {optimizer.max_steps}")
    if optimizer.weight_decay < 0:
        raise ConfigError(f"optimizer.weight_decay must be >= 0, got {optimizer.weight_decay}")
    for name in ("beta1", "beta2"):
        b = getattr(optimizer, name)
        if not 0.0 < b < 1.0:
            raise ConfigError(f"optimizer.{name} must be in (0, 1), got {b}")

    if "data" not in raw:
        raise ConfigError("missing required key 'data'")
    data_raw = _section(raw, "data")
    _reject_unknown("data", data_raw, _DATA_KEYS)
    planted = None
    if "planted" in data_raw:
        planted_raw = data_raw["planted"] or {}
        if not isinstance(planted_raw, dict):
            raise ConfigError("data.planted must be a mapping")
        _reject_unknown("data.planted", planted_raw, _PLANTED_KEYS)
        planted = PlantedSpec(
            dim=int(planted_raw.get("dim", 16)),
            train_queries=int(planted_raw.get("train_queries", 500)),
            val_queries=int(planted_raw.get("val_queries", 100)),
            candidates=int(planted_raw.get("candidates", 20)),
            query_shift=float(planted_raw.get("query_shift", 2.0)),
            teacher_noise=float(planted_raw.get("teacher_noise", 0.0)),
            grade2=int(planted_raw.get("grade2", 1)),
            grade1=int(planted_raw.get("grade1", 4)),
            seed=int(planted_raw.get("seed", 7)),
        )
        if planted.candidates < 2:
            raise ConfigError(f"data.planted.candidates must be >= 2, got {planted.candidates}")
        if planted.grade2 + planted.grade1 >= planted.candidates:
            raise ConfigError("data.planted must leave at least one grade-0 candidate per query")
        if planted.grade2 + planted.grade1 < 1:
            raise ConfigError("data.planted needs at least one relevant candidate per query")
        if planted.dim != dim:
            raise ConfigError(f"data.planted.dim ({planted.dim}) != scorer.dim ({dim})")
        path_keys = [k for k in ("features", "qrels", "triplets", "ranked_lists", "validation_queries")
                     if data_raw.get(k)]
        if path_keys:
            raise ConfigError(f"data mixes planted and file paths (found {path_keys[0]!r})")

    def _resolve(key: str, required: bool) -> str | None:
        value = data_raw.get(key)
        if value is None:
            if required:
                raise ConfigError(f"missing required key 'data.{key}'")
            return None
        p = Path(value)
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"data.{key} path does not exist: {p}")
        return str(p)

    if planted is None:
        data = DataConfig(
            planted=None,
            features=_resolve("features", required=True),
            qrels=_resolve("qrels", required=True),
            triplets=_resolve("triplets", required=False),
            ranked_lists=_resolve("ranked_lists", required=False),
            validation_queries=_resolve("validation_queries", required=True),
        )
        if objective == "margin_mse" and data.triplets is None:
            raise ConfigError("objective margin_mse needs 'data.triplets'")
        if objective in ("distill_ranknet", "adr_mse") and data.ranked_lists is None:
            raise ConfigError(f"objective {objective} needs 'data.ranked_lists'")
    else:
        data = DataConfig(planted=planted)

    seeds_raw = raw.get("seeds", [0, 1, 2])
    if not isinstance(seeds_raw, (list, tuple)) or not seeds_raw:
        raise ConfigError("seeds must be a non-empty list of integers")
    seeds = tuple(int(s) for s in seeds_raw)

    validate_every = int(raw.get("validate_every", 1000))
    if validate_every < 1:
        raise ConfigError(f"validate_every must be >= 1, got {validate_every}")
    ndcg_k = int(raw.get("ndcg_k", 10))
    if ndcg_k < 1:
        raise ConfigError(f"ndcg_k must be >= 1, got {ndcg_k}")
    positive_threshold = int(raw.get("positive_threshold", 1))
    if positive_threshold < 1:
        raise ConfigError(f"positive_threshold must be >= 1, got {positive_threshold}")
    infonce_negatives = int(raw.get("infonce_negatives", 7))
    if infonce_negatives < 1:
        raise ConfigError(f"infonce_negatives must be >= 1, got {infonce_negatives}")

    return ExperimentConfig(
        objective=objective,
        data=data,
        loss_temperature=temperature,
        loss_margin=margin,
        scorer=ScorerSpec(kind, dim, hidden),
        optimizer=optimizer,
        seeds=seeds,
        validate_every=validate_every,
        ndcg_k=ndcg_k,
        positive_threshold=positive_threshold,
        infonce_negatives=infonce_negatives,
    )


# --- checkpoints -----------------------------------------------------------

_CHECKPOINT_MAGIC = "rankforge-checkpoint v1"


@dataclass(frozen=True)
class CheckpointMeta:
    step: int = 0
    objective: str = ""
    seed: int = 0
    validation: float = 0.0


def save_checkpoint(params: ScorerParams, meta: CheckpointMeta, stream: TextIO) -> None:
    """Write a scorer checkpoint; parameter round-trips are bit-exact."""
    stream.write(_CHECKPOINT_MAGIC + "\n")
    stream.write(f"kind {params.kind}\n")
    stream.write(f"dim {params.dim}\n")
    stream.write(f"hidden {params.hidden}\n")
    stream.write(f"step {meta.step}\n")
    stream.write(f"objective {meta.objective}\n")
    stream.write(f"seed {meta.seed}\n")
    stream.write(f"validation {format(meta.validation, '.17g')}\n")
    stream.write(f"params {params.weights.size}\n")
    for w in params.weights:
        stream.write(format(float(w), ".17g") + "\n")


def load_checkpoint(stream: TextIO | str) -> tuple[ScorerParams, CheckpointMeta]:
    """Read a checkpoint written by save_checkpoint; fails with no partial state."""
    text = stream if isinstance(stream, str) else stream.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint header: expected {_CHECKPOINT_MAGIC!r}")
    header: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        key, sep, value = line.partition(" ")
        if not key or not sep:
            raise CheckpointError(f"malformed checkpoint header line {i + 1}: {line!r}")
        header[key] = value.strip()
        if key == "params":
            body_start = i + 1
            break
    if body_start is None:
        raise CheckpointError("checkpoint header never declares a params count")
    required = {"kind", "dim", "hidden", "step", "objective", "seed", "validation", "params"}
    missing = required - set(header)
    if missing:
        raise CheckpointError(f"checkpoint header missing keys: {sorted(missing)}")
    try:
        dim, hidden = int(header["dim"]), int(header["hidden"])
        count = int(header["params"])
        meta = CheckpointMeta(
            step=int(header["step"]),
            objective=header["objective"],
            seed=int(header["seed"]),
            validation=float(header["validation"]),
        )
    except ValueError as exc:
        raise CheckpointError(f"bad checkpoint header value: {exc}") from None
    body = [line for line in lines[body_start:] if line.strip()]
    if len(body) != count:
        raise CheckpointError(f"checkpoint declares {count} parameters but has {len(body)}")
    try:
        weights = np.array([float(v) for v in body])
    except ValueError:
        raise CheckpointError("checkpoint parameter lines must be numbers") from None
    try:
        params = ScorerParams(header["kind"], dim, hidden, weights)
    except RankforgeError as exc:
        raise CheckpointError(str(exc)) from None
    return params, meta


def check_compatible(params: ScorerParams, kind: str, dim: int, hidden: int) -> None:
    """Reject loading a checkpoint into a scorer with a different shape."""
    if (params.kind, params.dim, params.hidden) != (kind, dim, hidden):
        raise CheckpointError(
            f"checkpoint is {params.kind} (d={params.dim}, h={params.hidden}); "
            f"expected {kind} (d={dim}, h={hidden})"
        )
