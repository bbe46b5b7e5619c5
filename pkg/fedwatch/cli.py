"""Command-line entry point.

One subcommand per pipeline stage:
- crawl: run crawl cycles into a store
- analyze: write one analytics report as CSV or JSON
- report: write every analytics report into a directory
- features: write the 38-column feature matrix of a store
- train: run the global, time-window or local task
- predict: score a store with a saved model and write a watchlist
- synth: generate a synthetic store with its ground-truth manifest

Logs go to standard error, data only to files. Exit codes: 0 on success,
2 on usage errors, 1 on runtime failures.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import httpx

from .analytics import (
    admin_distribution,
    admin_growth,
    empirical_cdf,
    histogram_rows,
    lag_groups,
    lag_summary,
    moderator_split,
    policy_footprint,
    policy_growth_series,
    policy_table,
    posts_by_admin_count,
    response_lags,
)
from .constants import (
    ADMIN_GROWTH_HEADER,
    ADMINS_HEADER,
    DECISION_THRESHOLD,
    DEFAULT_GROWTH_BUCKET_DAYS,
    FAMILIES,
    FOOTPRINT_HEADER,
    GROWTH_HEADER,
    LAG_CDF_HEADER,
    LAG_GROUPS_HEADER,
    LAG_SUMMARY_HEADER,
    LAGS_HEADER,
    LOG_FORMAT,
    MODERATOR_SPLIT_HEADER,
    POLICY_TABLE_HEADER,
    POSTS_BY_ADMINS_HEADER,
    REPORTS,
    SECONDS_PER_DAY,
)
from .crawler import Crawler
from .exceptions import FedwatchConfigError, FedwatchError
from .features import BoxCoxTransforms, HateLexicon, extract_matrix
from .learners import load_model, save_model
from .models import CorpusParams, CrawlConfig, InstanceRef, RunConfig, TimeWindow
from .store import Store
from .synthcorpus import generate_corpus
from .utils import parse_timestamp, write_csv, write_json
from .watchgen import (
    best_window,
    build_global_dataset,
    candidate_dataset,
    generate_watchlist,
    local_summary,
    results_to_json,
    run_global,
    run_local,
    run_windows,
    write_watchlist,
)

logger = logging.getLogger(__name__)

TASKS = ("global", "window", "local")

Table = Tuple[Tuple[str, ...], List[Tuple]]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedwatch", description="Fediverse moderation policy toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    crawl = sub.add_parser("crawl", help="Run crawl cycles into a store")
    crawl.add_argument("--store", required=True, help="Store directory")
    crawl.add_argument("--seed-instance", dest="seeds", action="append", default=[],
                       help="Seed instance domain (repeatable)")
    crawl.add_argument("--config", help="Crawl configuration JSON")
    crawl.add_argument("--cycles", type=int, default=1, help="Number of cycles to run")
    crawl.add_argument("--mock-base-url", help="Route every request through this base URL")
    crawl.add_argument("--lexicon", help="Hate lexicon file, one term per line")
    crawl.add_argument("--out", help="Write the cycle reports as JSON")

    analyze = sub.add_parser("analyze", help="Write one analytics report")
    analyze.add_argument("--store", required=True, help="Store directory")
    analyze.add_argument("--report", required=True, choices=REPORTS)
    analyze.add_argument("--at", help="Observation time (ISO 8601 or Unix seconds); the last one by default")
    analyze.add_argument("--bucket-days", type=int, default=DEFAULT_GROWTH_BUCKET_DAYS,
                         help="Growth series spacing")
    analyze.add_argument("--format", choices=("csv", "json"), default="csv")
    analyze.add_argument("--out", help="Output file; <report>.<format> by default")

    report = sub.add_parser("report", help="Write every analytics report into a directory")
    report.add_argument("--store", required=True, help="Store directory")
    report.add_argument("--out", required=True, help="Output directory")
    report.add_argument("--format", choices=("csv", "json"), default="csv")
    report.add_argument("--bucket-days", type=int, default=DEFAULT_GROWTH_BUCKET_DAYS)

    features = sub.add_parser("features", help="Write the feature matrix of a store")
    features.add_argument("--store", required=True, help="Store directory")
    features.add_argument("--out", required=True, help="Output CSV")
    features.add_argument("--raw", action="store_true", help="Leave the Box-Cox columns at 0")

    train = sub.add_parser("train", help="Train and evaluate a model family")
    train.add_argument("--store", required=True, help="Store directory")
    train.add_argument("--task", required=True, choices=TASKS)
    train.add_argument("--family", required=True, choices=FAMILIES)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True, help="Output directory for metrics and the model")
    train.add_argument("--ablate", action="store_true", help="Drop posts and posts_tr (global task)")
    train.add_argument("--n-jobs", type=int, default=1, help="Parallel grid fits / local jobs")

    predict = sub.add_parser("predict", help="Write a watchlist for a store")
    predict.add_argument("--model", required=True, help="Model file written by train")
    predict.add_argument("--store", required=True, help="Store directory")
    predict.add_argument("--out", required=True, help="Watchlist JSON")
    predict.add_argument("--threshold", type=float, default=DECISION_THRESHOLD)
    predict.add_argument("--top-k", type=int)

    synth = sub.add_parser("synth", help="Generate a synthetic store")
    synth.add_argument("--params", help="Corpus parameters JSON")
    synth.add_argument("--out", required=True, help="Store directory to create")
    synth.add_argument("--seed", type=int, help="Overrides the seed in --params")
    synth.add_argument("--lexicon", help="Lexicon for the textual sub-corpus")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    seed = getattr(args, "seed", None)
    return RunConfig(
        command=args.command,
        store=getattr(args, "store", None),
        out=getattr(args, "out", None) or (
            f"{args.report}.{args.format}" if args.command == "analyze" else None
        ),
        seed=seed if seed is not None else 0,
        mock_base_url=getattr(args, "mock_base_url", None),
        lexicon=getattr(args, "lexicon", None),
        task=getattr(args, "task", None),
        family=getattr(args, "family", None),
        report=getattr(args, "report", None),
        format=getattr(args, "format", "csv"),
        params=getattr(args, "params", None),
        config=getattr(args, "config", None),
        model=getattr(args, "model", None),
        threshold=getattr(args, "threshold", DECISION_THRESHOLD),
        top_k=getattr(args, "top_k", None),
        ablate=getattr(args, "ablate", False),
        cycles=getattr(args, "cycles", 1),
        seeds=list(getattr(args, "seeds", [])),
        n_jobs=getattr(args, "n_jobs", 1),
    )


def _open_store(path: str) -> Store:
    return Store(path, create=False)


def _at(store: Store, value: Optional[str]) -> int:
    if value is None:
        return store.time_range()[1]
    if value.isdigit():
        return int(value)
    try:
        return parse_timestamp(value)
    except ValueError as e:
        raise FedwatchConfigError(f"--at: {e}") from e


# Reports

def report_table(store: Store, name: str, at: int, bucket_days: int = DEFAULT_GROWTH_BUCKET_DAYS) -> Table:
    """Header and rows of one analytics report."""
    if name == "footprint":
        return FOOTPRINT_HEADER, [r.row() for r in policy_footprint(store, at)]
    if name == "growth":
        return GROWTH_HEADER, policy_growth_series(store, bucket_days * SECONDS_PER_DAY).rows()
    if name == "admins":
        return ADMINS_HEADER, histogram_rows(admin_distribution(store, at))
    if name == "posts_by_admins":
        groups = posts_by_admin_count(store, at)
        return POSTS_BY_ADMINS_HEADER, [(n, count) for n, counts in groups.items() for count in counts]
    if name == "admin_growth":
        return ADMIN_GROWTH_HEADER, admin_growth(store).rows()
    if name == "lags":
        return LAGS_HEADER, [r.row() for r in response_lags(store)]
    if name == "lag_cdf":
        lags = response_lags(store)
        return LAG_CDF_HEADER, empirical_cdf(r.lag_days for r in lags).steps() if lags else []
    if name == "lag_groups":
        return LAG_GROUPS_HEADER, [r.row() for r in lag_groups(response_lags(store))]
    if name == "lag_summary":
        return LAG_SUMMARY_HEADER, list(lag_summary(response_lags(store)).items())
    if name == "moderator_split":
        return MODERATOR_SPLIT_HEADER, moderator_split(store, at).rows()
    if name == "policy_table":
        return POLICY_TABLE_HEADER, [r.row() for r in policy_table(store)]
    raise FedwatchConfigError(f"Unknown report {name!r}")


def write_table(path: Path, table: Table, fmt: str) -> Path:
    header, rows = table
    if fmt == "json":
        return write_json(path, [dict(zip(header, row)) for row in rows])
    return write_csv(path, header, rows)


# Commands

def cmd_crawl(config: RunConfig, transport: Optional[httpx.AsyncBaseTransport] = None) -> None:
    if config.config:
        crawl_config = CrawlConfig.from_dict(_read_json(config.config))
    else:
        crawl_config = CrawlConfig()
    if config.seeds:
        try:
            crawl_config.seed_instances = sorted(set(crawl_config.seed_instances) | {InstanceRef(d) for d in config.seeds})
        except ValueError as e:
            raise FedwatchConfigError(f"--seed-instance: {e}") from e
    if config.mock_base_url:
        crawl_config.mock_base_url = config.mock_base_url
    lexicon = HateLexicon.from_file(config.lexicon) if config.lexicon else None
    store = Store(config.store)

    async def _run():
        async with Crawler(crawl_config, store, transport=transport, lexicon=lexicon) as crawler:
            return await crawler.run_forever(cycles=config.cycles)

    reports = asyncio.run(_run())
    for report in reports:
        logger.info("Cycle outcomes: %s", report.tally())
    if config.out:
        write_json(config.out, [r.to_dict() for r in reports])


def cmd_analyze(config: RunConfig, at: Optional[str], bucket_days: int) -> None:
    store = _open_store(config.store)
    table = report_table(store, config.report, _at(store, at), bucket_days)
    path = write_table(Path(config.out), table, config.format)
    logger.info("Wrote %s (%d rows)", path, len(table[1]))


def cmd_report(config: RunConfig, bucket_days: int) -> None:
    store = _open_store(config.store)
    at = _at(store, None)
    out = Path(config.out)
    for name in REPORTS:
        try:
            table = report_table(store, name, at, bucket_days)
        except FedwatchError as e:
            logger.warning("Skipping %s: %s", name, e)
            continue
        write_table(out / f"{name}.{config.format}", table, config.format)
    logger.info("Wrote reports to %s", out)


def cmd_features(config: RunConfig, raw: bool) -> None:
    store = _open_store(config.store)
    _, last = store.time_range()
    matrix = extract_matrix(store, TimeWindow(store.corpus_start, last + 1))
    if not raw and len(matrix):
        matrix = matrix.apply(BoxCoxTransforms.fit(matrix.vectors))
    matrix.to_csv(config.out)
    logger.info("Wrote %d feature rows to %s (%d skipped)", len(matrix), config.out, len(matrix.skipped))


def cmd_train(config: RunConfig) -> None:
    store = _open_store(config.store)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.task == "global":
        model, result = run_global(store, config.family, seed=config.seed, ablate=config.ablate,
                                   n_jobs=config.n_jobs)
        save_model(model, out / "model.joblib")
        train_set, test_set = build_global_dataset(store, seed=config.seed)
        train_set.to_csv(out / "train.csv")
        test_set.to_csv(out / "test.csv")
        write_json(out / "metrics.json", result.to_dict())
    elif config.task == "window":
        results = run_windows(store, config.family, seed=config.seed, n_jobs=config.n_jobs)
        payload: Dict[str, Any] = {"windows": results_to_json(results)}
        if results:
            payload["best_month"] = best_window(results).month
        write_json(out / "metrics.json", payload)
    else:
        results = run_local(store, config.family, seed=config.seed, max_workers=config.n_jobs)
        write_json(out / "metrics.json", {"summary": local_summary(results), "instances": results_to_json(results)})
    logger.info("Wrote %s", out / "metrics.json")


def cmd_predict(config: RunConfig) -> None:
    store = _open_store(config.store)
    model = load_model(config.model)
    candidates = candidate_dataset(store, model)
    entries = generate_watchlist(model, candidates, threshold=config.threshold, top_k=config.top_k)
    write_watchlist(entries, config.out)
    logger.info("Wrote %d watchlist entries to %s", len(entries), config.out)


def cmd_synth(config: RunConfig, seed: Optional[int]) -> None:
    params = CorpusParams.from_json(config.params) if config.params else CorpusParams()
    if seed is not None:
        params.seed = seed
    lexicon = HateLexicon.from_file(config.lexicon) if config.lexicon else None
    _, manifest = generate_corpus(params, config.out, lexicon=lexicon)
    logger.info("Synthetic store at %s with %d controversial instances", config.out, len(manifest.controversial))


def _read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise FedwatchConfigError(f"Cannot read {path}: {e}") from e


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def run(argv: Optional[Sequence[str]] = None, transport: Optional[httpx.AsyncBaseTransport] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code.

    Args:
        argv: Arguments without the program name; ``sys.argv[1:]`` by default
        transport: httpx transport for the crawl subcommand (tests pass a mock)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)
    config = _run_config(args)
    try:
        config.validate()
    except FedwatchConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"fedwatch: error: {e}", file=sys.stderr)
        return 2

    commands: Dict[str, Callable[[], None]] = {
        "crawl": lambda: cmd_crawl(config, transport),
        "analyze": lambda: cmd_analyze(config, args.at, args.bucket_days),
        "report": lambda: cmd_report(config, args.bucket_days),
        "features": lambda: cmd_features(config, args.raw),
        "train": lambda: cmd_train(config),
        "predict": lambda: cmd_predict(config),
        "synth": lambda: cmd_synth(config, args.seed),
    }
    try:
        commands[config.command]()
    except FedwatchError as e:
        logger.error("%s failed: %s", config.command, e)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
