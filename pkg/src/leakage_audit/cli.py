"""Command-line entry point.

One subcommand per pipeline stage. Every invocation that writes outputs
records a manifest.json in the output directory: the command, a digest of
the effective configuration, digests of all inputs and outputs, the seed,
the tool version, and a timestamp. Reruns with identical inputs and seed
reproduce identical data-file digests.

Global flags (valid after any subcommand): --seed, --threads, --out,
--config, --format. A JSON --config file supplies defaults for any flag of
the subcommand (keys use underscores); explicit flags win. Exit codes:
0 success, 1 validation or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, corpus_io, datasets, evaluation, leakage, memorization, nn_search
from .errors import AuditError
from .types import Reformulation, Source

_FORMATS = ("json", "table")


def _parent_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=0, help="master random seed")
    parent.add_argument("--threads", type=int, default=1, help="worker thread cap")
    parent.add_argument("--out", help="output directory (manifest recorded there)")
    parent.add_argument("--config", help="JSON file with default values for any flag")
    parent.add_argument("--format", choices=_FORMATS, default="table",
                        help="stdout rendering")
    return parent


def _queries_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "jsonl" if str(path).endswith(".jsonl") else "tsv"


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


class UsageError(Exception):
    pass


def _write_manifest(out: Path, command: str, args, input_paths: list, output_names: list[str]):
    skip = {"func", "config", "out", "format"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    config_digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
    manifest = {
        "command": command,
        "config_digest": config_digest,
        "input_digests": {str(p): corpus_io.sha256_file(p) for p in input_paths if p},
        "output_digests": {n: corpus_io.sha256_file(out / n) for n in output_names},
        "seed": args.seed,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _emit(args, payload: dict, table: str | None = None):
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    elif table is not None:
        print(table, end="" if table.endswith("\n") else "\n")
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_candidates(args) -> int:
    out = _out_dir(args)
    topics = corpus_io.parse_topics(args.topics)
    matrix = corpus_io.read_embeddings(args.embeddings, args.ids, mmap=args.mmap)
    topic_matrix = corpus_io.read_embeddings(args.topic_embeddings, args.topic_ids)
    if not args.no_normalize:
        matrix = nn_search.normalize_rows(matrix)
        topic_matrix = nn_search.normalize_rows(topic_matrix)
    candidates = leakage.generate_candidates(topics, matrix, topic_matrix, args.k,
                                             threads=args.threads)
    corpus_io.write_candidates(candidates, out / "candidates.csv")
    _write_manifest(out, "candidates", args,
                    [args.topics, args.embeddings, args.ids,
                     args.topic_embeddings, args.topic_ids],
                    ["candidates.csv"])
    _emit(args, {"candidates": len(candidates),
                 "topics": len({c.topic_id for c in candidates}),
                 "queries": len({c.query_id for c in candidates})},
          f"{len(candidates)} candidates "
          f"({len({c.topic_id for c in candidates})} topics, "
          f"{len({c.query_id for c in candidates})} queries)")
    return 0


def _cmd_sample_sheet(args) -> int:
    out = _out_dir(args)
    candidates = corpus_io.parse_candidates(args.candidates)
    sample = leakage.stratified_sample(candidates, floor=args.floor, n=args.n,
                                       bin_width=args.bin_width, seed=args.seed)
    if sample.too_few:
        warnings.warn(f"only {len(sample.candidates)} distinct pairs above "
                      f"{args.floor}; requested {args.n}")
    corpus_io.write_sheet(sample.candidates, out / "sheet.csv")
    _write_manifest(out, "sample-sheet", args, [args.candidates], ["sheet.csv"])
    _emit(args, {"sampled": len(sample.candidates), "too_few": sample.too_few,
                 "bin_populations": sample.bin_populations,
                 "bin_allocations": sample.bin_allocations},
          f"sampled {len(sample.candidates)} pairs" + (" (short)" if sample.too_few else ""))
    return 0


def _cmd_calibrate(args) -> int:
    out = _out_dir(args)
    labeled = [(c.similarity, c.label) for c in corpus_io.parse_sheet(args.sheet)
               if c.label is not None]
    result = leakage.calibrate_threshold(labeled, target_precision=args.target_precision)
    payload = {
        "threshold": result.threshold,
        "achieved_precision": result.achieved_precision,
        "support": result.support,
        "target_precision": args.target_precision,
        "labeled": len(labeled),
    }
    with open(out / "calibration.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "calibrate", args, [args.sheet], ["calibration.json"])
    _emit(args, payload,
          f"threshold {result.threshold} (precision {result.achieved_precision:.4f} "
          f"over {result.support} pairs)")
    return 0


def _cmd_classify(args) -> int:
    out = _out_dir(args)
    candidates = corpus_io.parse_candidates(args.candidates)
    topics = corpus_io.parse_topics(args.topics).by_id()
    queries = corpus_io.parse_queries(
        args.queries, format=_queries_format(args.queries, args.queries_format)).by_id()
    classified = []
    for c in candidates:
        if c.topic_id not in topics:
            raise AuditError(f"candidate references unknown topic {c.topic_id!r}")
        if c.query_id not in queries:
            raise AuditError(f"candidate references unknown query {c.query_id!r}")
        ref = leakage.classify_reformulation(topics[c.topic_id].title,
                                             queries[c.query_id].text,
                                             c.similarity, args.floor)
        label = c.label
        if label is None:
            label = ref != Reformulation.DIFFERENT_TOPIC
        elif label and ref == Reformulation.DIFFERENT_TOPIC:
            # A human said leak; the token heuristic only picks the subtype.
            ref = Reformulation.REFORMULATION
        elif not label:
            ref = Reformulation.DIFFERENT_TOPIC
        classified.append(dataclasses.replace(c, label=label, reformulation=ref))
    corpus_io.write_candidates(classified, out / "classified.csv")
    _write_manifest(out, "classify", args,
                    [args.candidates, args.topics, args.queries], ["classified.csv"])
    histogram = {r.value: sum(1 for c in classified if c.reformulation == r)
                 for r in Reformulation}
    _emit(args, {"classified": len(classified), "histogram": histogram},
          "  ".join(f"{k}={v}" for k, v in histogram.items()))
    return 0


def _cmd_report(args) -> int:
    out = _out_dir(args)
    candidates = corpus_io.parse_candidates(args.candidates)
    sources = corpus_io.parse_queries(
        args.sources, format=_queries_format(args.sources, args.sources_format))
    report = leakage.leakage_report(candidates, args.theta, sources,
                                    verified_only=args.verified_only)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "report", args, [args.candidates, args.sources], ["report.json"])
    _emit(args, report, leakage.format_report_table(report))
    return 0


def _scenario_inputs(paths: dict, base: Path) -> datasets.ScenarioInputs:
    def resolve(key):
        return (base / paths[key]) if key in paths and paths[key] else None

    pool_path = resolve("pool")
    if pool_path is None:
        raise UsageError("scenario inputs need a query pool")
    fmt = _queries_format(str(pool_path), paths.get("pool_format"))
    pool = corpus_io.parse_queries(pool_path, format=fmt)
    positives_path = resolve("positives")
    runs_path = resolve("runs")
    if positives_path is None or runs_path is None:
        raise UsageError("scenario inputs need positives and runs")
    exclusions: frozenset[str] = frozenset()
    if resolve("exclusions"):
        exclusions = frozenset(
            c.query_id for c in corpus_io.parse_candidates(resolve("exclusions")))
    leaks: tuple = ()
    if resolve("leaks"):
        leaks = tuple(c for c in corpus_io.parse_candidates(resolve("leaks"))
                      if c.label is True)
    topics = corpus_io.parse_topics(resolve("topics")) if resolve("topics") else None
    qrels = corpus_io.parse_qrels(resolve("qrels")) if resolve("qrels") else None
    return datasets.ScenarioInputs(
        pool=pool,
        positives=corpus_io.parse_positives(positives_path),
        bm25_runs=corpus_io.parse_run(runs_path),
        exclusions=exclusions,
        verified_leaks=leaks,
        topics=topics,
        qrels=qrels,
    )


def _cmd_build(args) -> int:
    out = _out_dir(args)
    scenario = datasets.Scenario(args.scenario)
    kind = datasets.Kind(args.kind)
    spec = datasets.DatasetSpec.make(scenario, kind, args.size, seed=args.seed)
    paths = {
        "pool": args.pool, "pool_format": args.pool_format, "positives": args.positives,
        "runs": args.runs, "exclusions": args.exclusions, "leaks": args.leaks,
        "topics": args.topics, "qrels": args.qrels,
    }
    inputs = _scenario_inputs({k: v for k, v in paths.items() if v}, Path("."))
    training_set = datasets.build_dataset(spec, inputs)
    name = datasets.grid_file_name(scenario, kind, args.size)
    corpus_io.write_training_set(training_set, out / name)
    _write_manifest(out, "build", args,
                    [p for k, p in paths.items() if p and k != "pool_format"], [name])
    leaked = len(training_set.leaked_pairs())
    _emit(args, {"file": name, "queries": len(training_set.pairs),
                 "instances": training_set.instance_count(), "leaked_queries": leaked},
          f"{name}: {len(training_set.pairs)} queries "
          f"({training_set.instance_count()} instances, {leaked} leaked)")
    return 0


def _cmd_build_grid(args) -> int:
    out = _out_dir(args)
    if not args.config:
        raise UsageError("build-grid needs --config with a scenarios table")
    with open(args.config, encoding="utf-8") as f:
        config = json.load(f)
    scenarios_cfg = config.get("scenarios")
    if not scenarios_cfg:
        raise UsageError("config lacks a scenarios table")
    base = Path(args.config).parent
    inputs = {datasets.Scenario(name): _scenario_inputs(paths, base)
              for name, paths in scenarios_cfg.items()}
    sizes = tuple(args.sizes) if args.sizes else datasets.GRID_SIZES
    manifest = datasets.build_grid(inputs, out, seed=args.seed, sizes=sizes)
    _write_manifest(out, "build-grid", args, [args.config],
                    [f["path"] for f in manifest["files"]] + ["grid_manifest.json"])
    _emit(args, {"files": len(manifest["files"]), "out": str(out)},
          f"built {len(manifest['files'])} training sets in {out}")
    return 0


def _metric_payload(results: dict) -> dict:
    return {
        m.value: {
            "mean": r.mean,
            "topics_evaluated": r.topics_evaluated,
            "per_topic": {t: r.per_topic[t] for t in sorted(r.per_topic)},
        }
        for m, r in results.items()
    }


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    run = corpus_io.parse_run(args.run)
    qrels = corpus_io.parse_qrels(args.qrels)
    results = evaluation.evaluate(run, qrels, depth=args.depth)
    payload = _metric_payload(results)
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "scores.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("topic_id,metric,value\n")
        for metric in sorted(payload):
            for topic in sorted(payload[metric]["per_topic"]):
                f.write(f"{topic},{metric},{payload[metric]['per_topic'][topic]!r}\n")
    _write_manifest(out, "eval", args, [args.run, args.qrels],
                    ["metrics.json", "scores.csv"])
    table = "\n".join(
        f"{m:8s} mean {payload[m]['mean']:.4f} over {payload[m]['topics_evaluated']} topics"
        for m in sorted(payload))
    _emit(args, payload, table)
    return 0


def _system_labels(paths: list[str]) -> list[str]:
    """Short unique labels: file stem, then parent/stem, then full path."""
    for label_of in (lambda p: Path(p).stem,
                     lambda p: f"{Path(p).parent.name}/{Path(p).stem}",
                     str):
        labels = [label_of(p) for p in paths]
        if len(set(labels)) == len(labels):
            return labels
    raise UsageError(f"duplicate metrics file in --inputs: {paths}")


def _cmd_sig_test(args) -> int:
    out = _out_dir(args)
    if len(args.inputs) < 2:
        raise UsageError("sig-test needs at least 2 metrics files")
    tables = {}
    for name, path in zip(_system_labels(list(args.inputs)), args.inputs):
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if args.metric not in data:
            raise AuditError(f"{path}: no {args.metric!r} block")
        tables[name] = data[args.metric]["per_topic"]
    tests = evaluation.pairwise_tests(tables, alpha=args.alpha)
    payload = {"metric": args.metric, "alpha": args.alpha, "tests": tests}
    with open(out / "significance.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "sig-test", args, list(args.inputs), ["significance.json"])
    table = "\n".join(
        f"{t['system_a']} vs {t['system_b']}: t={t['t_statistic']:.4f} "
        f"p={t['p_value']:.4g} adj={t['p_adjusted']:.4g}"
        f"{' *' if t['significant'] else ''}"
        for t in tests)
    _emit(args, payload, table)
    return 0


def _cmd_cv(args) -> int:
    out = _out_dir(args)
    with open(args.grid, encoding="utf-8") as f:
        cells = json.load(f)
    grid = {}
    for cell in cells:
        key = (cell["condition"], int(cell["size"]), int(cell["seed"]))
        if key in grid:
            raise AuditError(f"duplicate grid cell {key}")
        grid[key] = {t: float(v) for t, v in cell["scores"].items()}
    fold_seed = args.fold_seed if args.fold_seed is not None else args.seed
    result = evaluation.cross_validate(grid, folds=args.folds,
                                       target_metric=evaluation.Metric(args.metric),
                                       fold_seed=fold_seed)
    with open(out / "cv.json", "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "cv", args, [args.grid], ["cv.json"])
    table = "\n".join(
        f"{c}: cv={block['cv_score']:.4f} sizes={block['selected_sizes']}"
        for c, block in sorted(result["conditions"].items()))
    _emit(args, result, table)
    return 0


def _cmd_memorize(args) -> int:
    out = _out_dir(args)
    with_run = corpus_io.parse_run(args.with_run)
    without_run = corpus_io.parse_run(args.without_run)
    leaked = memorization.parse_leaked_docs(args.leaked)
    rescores_with = corpus_io.parse_rescores(args.rescores_with) if args.rescores_with else None
    rescores_without = (corpus_io.parse_rescores(args.rescores_without)
                        if args.rescores_without else None)
    with_scores = memorization.ConditionScores(with_run, rescores_with, depth=args.depth)
    without_scores = memorization.ConditionScores(without_run, rescores_without,
                                                  depth=args.depth)
    report = memorization.memorization_report(with_scores, without_scores, leaked)
    with open(out / "memorization.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "memorize", args,
                    [args.with_run, args.without_run, args.leaked,
                     args.rescores_with, args.rescores_without],
                    ["memorization.json"])
    _emit(args, report, memorization.format_memorization_table(report))
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parent = _parent_parser()
    parser = argparse.ArgumentParser(
        prog="leakage-audit",
        description="Audit train-test leakage in retrieval benchmarks and "
                    "build controlled-leakage training sets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("candidates", parents=[parent],
                       help="nearest-query candidates for every topic field")
    p.add_argument("--topics", required=True, help="topics JSONL")
    p.add_argument("--embeddings", required=True, help="query embedding matrix (EMB1)")
    p.add_argument("--ids", required=True, help="query row ids, one per line")
    p.add_argument("--topic-embeddings", required=True, help="topic field matrix (EMB1)")
    p.add_argument("--topic-ids", required=True, help="topic field row ids")
    p.add_argument("--k", type=int, default=100, help="neighbors per field instance")
    p.add_argument("--mmap", action="store_true", help="memory-map the query matrix")
    p.add_argument("--no-normalize", action="store_true",
                   help="rows are already unit length")
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("sample-sheet", parents=[parent],
                       help="stratified labeling sample from candidates")
    p.add_argument("--candidates", required=True, help="candidates CSV")
    p.add_argument("--floor", type=float, default=leakage.DEFAULT_SAMPLE_FLOOR)
    p.add_argument("--n", type=int, default=100, help="pairs to sample")
    p.add_argument("--bin-width", type=float, default=0.02)
    p.set_defaults(func=_cmd_sample_sheet)

    p = sub.add_parser("calibrate", parents=[parent],
                       help="similarity threshold from a labeled sheet")
    p.add_argument("--sheet", required=True, help="labeled sheet CSV")
    p.add_argument("--target-precision", type=float,
                   default=leakage.DEFAULT_TARGET_PRECISION)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("classify", parents=[parent],
                       help="reformulation types for candidate pairs")
    p.add_argument("--candidates", required=True, help="candidates CSV")
    p.add_argument("--topics", required=True, help="topics JSONL")
    p.add_argument("--queries", required=True, help="query pool (TSV or JSONL)")
    p.add_argument("--queries-format", choices=("tsv", "jsonl"))
    p.add_argument("--floor", type=float, default=leakage.DEFAULT_SIMILARITY_THRESHOLD,
                   help="similarity below which unrelated pairs are a different topic")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("report", parents=[parent], help="leakage counts above a threshold")
    p.add_argument("--candidates", required=True, help="candidates CSV")
    p.add_argument("--theta", type=float, default=leakage.DEFAULT_SIMILARITY_THRESHOLD)
    p.add_argument("--sources", required=True,
                   help="query pool with sources (JSONL recommended)")
    p.add_argument("--sources-format", choices=("tsv", "jsonl"))
    p.add_argument("--verified-only", action="store_true",
                   help="count only pairs labeled true")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("build", parents=[parent], help="one controlled training set")
    p.add_argument("--scenario", required=True,
                   choices=[s.value for s in datasets.Scenario])
    p.add_argument("--kind", required=True, choices=[k.value for k in datasets.Kind])
    p.add_argument("--size", required=True, type=int, choices=datasets.GRID_SIZES)
    p.add_argument("--pool", required=True, help="query pool (TSV or JSONL)")
    p.add_argument("--pool-format", choices=("tsv", "jsonl"))
    p.add_argument("--positives", required=True, help="query_id TAB doc_id")
    p.add_argument("--runs", required=True, help="BM25 run file keyed by query id")
    p.add_argument("--exclusions", help="candidates CSV; all its query ids are excluded")
    p.add_argument("--leaks", help="labeled candidates CSV (msm-leakage)")
    p.add_argument("--topics", help="topics JSONL (test-leakage)")
    p.add_argument("--qrels", help="qrels (test-leakage)")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("build-grid", parents=[parent],
                       help="all kinds and sizes from a config of scenario inputs")
    p.add_argument("--sizes", type=int, nargs="+", help="override the size ladder")
    p.set_defaults(func=_cmd_build_grid)

    p = sub.add_parser("eval", parents=[parent], help="nDCG@10, P@1, MFR for a run")
    p.add_argument("--run", required=True, help="TREC run file")
    p.add_argument("--qrels", required=True, help="qrels file")
    p.add_argument("--depth", type=int, default=evaluation.MFR_DEPTH)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sig-test", parents=[parent],
                       help="pairwise paired t-tests with Bonferroni correction")
    p.add_argument("--metric", default="ndcg10",
                   choices=[m.value for m in evaluation.Metric])
    p.add_argument("--inputs", required=True, nargs="+",
                   help="two or more metrics.json files from eval")
    p.add_argument("--alpha", type=float, default=evaluation.DEFAULT_ALPHA)
    p.set_defaults(func=_cmd_sig_test)

    p = sub.add_parser("cv", parents=[parent],
                       help="five-fold cross-validated size selection")
    p.add_argument("--grid", required=True,
                   help="JSON list of {condition, size, seed, scores} cells")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--metric", default="ndcg10",
                   choices=[m.value for m in evaluation.Metric])
    p.add_argument("--fold-seed", type=int, help="defaults to --seed")
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("memorize", parents=[parent],
                       help="rank and score statistics for leaked documents")
    p.add_argument("--with-run", required=True, help="run trained with leakage")
    p.add_argument("--without-run", required=True, help="run trained without leakage")
    p.add_argument("--leaked", required=True, help="leaked docs CSV (topic,doc,polarity)")
    p.add_argument("--rescores-with", help="re-score TSV for the with-leakage run")
    p.add_argument("--rescores-without", help="re-score TSV for the without-leakage run")
    p.add_argument("--depth", type=int, default=memorization.RERANK_DEPTH)
    p.set_defaults(func=_cmd_memorize)

    return parser


def _config_defaults(argv: list[str], parser: argparse.ArgumentParser):
    """Apply a --config JSON file as parser defaults so flags still win.

    Subparsers parse into their own namespace, so the defaults must land on
    each subparser directly, restricted to the flags it actually declares.
    """
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return
    with open(path, encoding="utf-8") as f:
        config = json.load(f)
    flat = {k.replace("-", "_"): v for k, v in config.items() if not isinstance(v, dict)}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                dests = {a.dest for a in sub._actions}
                known = {k: v for k, v in flat.items() if k in dests}
                if known:
                    sub.set_defaults(**known)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(argv, parser)
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except AuditError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
