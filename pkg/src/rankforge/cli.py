"""Command-line entry point: train, rerank, eval, compare, gradcheck.

Every command is driven by plain-text inputs and is idempotent: the
same invocation produces byte-identical outputs. Exit codes: 0 success,
1 usage/config error, 2 data/parse error, 3 numerical failure
(divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io as rfio
from .core import InvalidConfigError, InvalidInputError, LossConfig, RankforgeError, RankMatrix
from .data import load_datasets
from .gradcheck import PASS_THRESHOLD, check_objective
from .losses import OBJECTIVES
from .metrics import mrr_at_k, ndcg_at_k, ranked_ids, recall_at_k
from .optim import DivergedRunError, train
from .scorer import score_batch
from .stats import build_report, render_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(RankforgeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one scorer per configured seed")
    p_train.add_argument("--config", required=True, help="experiment config (YAML)")
    p_train.add_argument("--seed", type=int, default=None, help="train only this seed")
    p_train.add_argument("--out", default="runs", help="output directory root")

    p_rerank = sub.add_parser("rerank", help="order candidates by checkpoint scores")
    p_rerank.add_argument("--checkpoint", required=True)
    p_rerank.add_argument("--features", required=True, help="candidate features file")
    p_rerank.add_argument("--out", required=True, help="output TREC run path")
    p_rerank.add_argument("--tag", default=rfio.RUN_TAG)

    p_eval = sub.add_parser("eval", help="score a TREC run against qrels")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--qrels", required=True)
    p_eval.add_argument("--metric", action="append", default=None,
                        help="metric spec like ndcg@10, recall@1000, mrr@10 (repeatable)")
    p_eval.add_argument("--k", type=int, default=None, help="override every metric cutoff")
    p_eval.add_argument("--threshold", type=int, default=1, help="recall/mrr relevance grade threshold")
    p_eval.add_argument("--per-query", action="store_true", help="also dump per-query values")
    p_eval.add_argument("--format", choices=("text", "records"), default="text")

    p_cmp = sub.add_parser("compare", help="Friedman test and Nemenyi tiers over a results matrix")
    p_cmp.add_argument("--matrix", required=True, help="header of method names, one instance per row")
    p_cmp.add_argument("--alpha", type=float, default=0.05)
    p_cmp.add_argument("--lower-is-better", action="store_true")
    p_cmp.add_argument("--out", default=None, help="write the machine-readable report here (JSON)")
    p_cmp.add_argument("--format", choices=("text", "records"), default="text")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of one objective")
    p_grad.add_argument("--objective", required=True, choices=OBJECTIVES)
    p_grad.add_argument("--n", type=int, default=8, help="list length for listwise objectives")
    p_grad.add_argument("--trials", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--temperature", type=float, default=1.0)
    p_grad.add_argument("--margin", type=float, default=1.0)
    p_grad.add_argument("--break-gradient", action="store_true",
                        help="debug: perturb the analytic gradient (negative control)")
    return parser


def cmd_train(args) -> int:
    config = rfio.load_config(args.config)
    config_hash = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()[:12]
    seeds = (args.seed,) if args.seed is not None else config.seeds
    train_data, val_data = load_datasets(config)
    for seed in seeds:
        out_dir = Path(args.out) / config_hash / str(seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "train.log", "w", encoding="utf-8") as log:
            try:
                state = train(config, train_data, val_data, seed, log_stream=log)
            except DivergedRunError as exc:
                print(f"error: seed {seed} diverged at step {exc.step}", file=sys.stderr)
                return EXIT_NUMERIC
        meta = rfio.CheckpointMeta(step=state.best.step, objective=config.objective,
                                   seed=seed, validation=state.best.validation)
        with open(out_dir / "checkpoint.txt", "w", encoding="utf-8") as fh:
            rfio.save_checkpoint(state.best.params, meta, fh)
        print(f"seed\t{seed}\tbest_step\t{state.best.step}"
              f"\tbest_ndcg@{config.ndcg_k}\t{state.best.validation:.6f}"
              f"\tcheckpoint\t{out_dir / 'checkpoint.txt'}")
    return EXIT_OK


def cmd_rerank(args) -> int:
    with open(args.checkpoint, encoding="utf-8") as fh:
        params, _ = rfio.load_checkpoint(fh)
    with open(args.features, encoding="utf-8") as fh:
        table = rfio.parse_features(fh)
    from .core import ScoredList

    runs = []
    for qid, docs in table.items():
        docids = tuple(sorted(docs))
        features = np.vstack([docs[d] for d in docids])
        rfio.check_compatible(params, params.kind, features.shape[1], params.hidden)
        scores = score_batch(params, features)
        scored = ScoredList(qid, docids, tuple(float(s) for s in scores))
        order = ranked_ids(scored)
        by_id = dict(zip(scored.passage_ids, scored.scores))
        runs.append(ScoredList(qid, order, tuple(by_id[d] for d in order)))
    with open(args.out, "w", encoding="utf-8") as fh:
        rfio.write_run(runs, fh, tag=args.tag)
    print(f"wrote\t{len(runs)}\tqueries\t{args.out}")
    return EXIT_OK


def _parse_metric_spec(spec: str) -> tuple[str, int]:
    name, _, cutoff = spec.partition("@")
    if name not in ("ndcg", "recall", "mrr") or not cutoff.isdigit():
        raise UsageError(f"bad metric spec {spec!r}; expected e.g. ndcg@10, recall@1000, mrr@10")
    return name, int(cutoff)


def cmd_eval(args) -> int:
    with open(args.run, encoding="utf-8") as fh:
        runs = rfio.parse_run(fh)
    with open(args.qrels, encoding="utf-8") as fh:
        qrels = rfio.parse_qrels(fh)
    specs = [_parse_metric_spec(s) for s in (args.metric or ["ndcg@10"])]
    for name, k in specs:
        if args.k is not None:
            k = args.k
        if name == "ndcg":
            report = ndcg_at_k(runs, qrels, k)
        elif name == "recall":
            report = recall_at_k(runs, qrels, k, args.threshold)
        else:
            report = mrr_at_k(runs, qrels, k, args.threshold)
        if report.num_queries == 0:
            print(f"warning: {report.metric} evaluated over 0 queries "
                  f"({report.num_excluded} excluded)", file=sys.stderr)
        if args.format == "records":
            print(json.dumps({"metric": report.metric, "mean": report.mean,
                              "num_queries": report.num_queries,
                              "num_excluded": report.num_excluded}, sort_keys=True))
            if args.per_query:
                for qid, value in sorted(report.per_query.items()):
                    print(json.dumps({"metric": report.metric, "query": qid, "value": value},
                                     sort_keys=True))
        else:
            print(f"{report.metric}\tmean\t{format(report.mean, '.17g')}"
                  f"\tqueries\t{report.num_queries}\texcluded\t{report.num_excluded}")
            if args.per_query:
                for qid, value in sorted(report.per_query.items()):
                    print(f"{report.metric}\t{qid}\t{format(value, '.17g')}")
    return EXIT_OK


def _parse_matrix(path: str) -> RankMatrix:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 2:
        raise rfio.ParseError("matrix needs a header and at least one row", 1)
    header = lines[0].split()
    labeled = header and header[0].lower() == "instance"
    methods = header[1:] if labeled else header
    if len(methods) < 2:
        raise rfio.ParseError("matrix needs at least 2 method columns", 1)
    instances, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if labeled:
            name, fields = fields[0], fields[1:]
        else:
            name = f"row{lineno - 1}"
        if len(fields) != len(methods):
            raise rfio.ParseError(
                f"expected {len(methods)} values, got {len(fields)}", lineno)
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise rfio.ParseError("matrix values must be numbers", lineno) from None
        instances.append(name)
    return RankMatrix(tuple(methods), tuple(instances), np.array(rows))


def cmd_compare(args) -> int:
    matrix = _parse_matrix(args.matrix)
    report = build_report(matrix, alpha=args.alpha, higher_is_better=not args.lower_is_better)
    payload = {
        "avg_ranks": report.avg_ranks,
        "chi_square": report.chi_square,
        "df": report.df,
        "p_value_bound": report.p_value_bound,
        "critical_difference": report.critical_difference,
        "alpha": report.alpha,
        "tiers": [list(t) for t in report.tiers],
    }
    if args.format == "records":
        print(json.dumps(payload, sort_keys=True))
    else:
        print(render_report(report))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = LossConfig(temperature=args.temperature, margin=args.margin)
    worst = check_objective(args.objective, n=args.n, trials=args.trials, seed=args.seed,
                            cfg=cfg, break_gradient=args.break_gradient)
    passed = worst < PASS_THRESHOLD
    print(f"{args.objective}\tmax_rel_err\t{worst:.3e}\t{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "rerank":
            return cmd_rerank(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_gradcheck(args)
    except (UsageError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (rfio.ParseError, rfio.CheckpointError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
