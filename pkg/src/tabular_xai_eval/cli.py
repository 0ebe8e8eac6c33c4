"""Command-line interface for tabular-xai-eval."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import (
    BenchmarkError,
    BenchmarkProgress,
    aggregate,
    dataset_metric_means,
    f1_metric_correlation,
    feature_count_correlation,
    run_benchmark,
)
from .config import ConfigError, load_run_config, resolve_seed
from .data import (
    DataError,
    RowIndexError,
    encode_target,
    fit_preprocessor,
    infer_schema,
    load_csv,
    stratified_split,
    transform,
)
from .explain import (
    TECHNIQUES,
    ExplainConfig,
    ExplainError,
    explain,
    make_explainer,
    mean_baseline,
)
from .metrics import METRICS, MetricConfig, MetricError, evaluate_all
from .models import ModelError, Predictor, load_model, model_to_dict, save_model
from .report import (
    CORRELATION_FILE,
    POINTS_FILE,
    REPORT_FORMATS,
    ReportError,
    read_records,
    read_summary,
    render_aggregate,
    write_correlations,
    write_outputs,
    write_points,
)
from .seeding import derive_seed
from .tuning import DEFAULT_PARAMS, FAMILIES, train_model, tune

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser for the CLI.

    Returns:
        Configured ArgumentParser instance
    """
    parser = argparse.ArgumentParser(
        prog="tabular-xai-eval",
        description="Benchmark local explanations of tabular classifiers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_get_epilog(),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true",
        help="Show progress and debug logging",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(subparsers)
    _add_explain_parser(subparsers)
    _add_report_parser(subparsers)
    _add_correlate_parser(subparsers)
    return parser


def _get_epilog() -> str:
    """Return CLI epilog with usage examples."""
    return """
Examples:
  # Run a benchmark described by a JSON config
  tabular-xai-eval run config.json --out results/

  # Explain one row with Kernel SHAP and score the explanation
  tabular-xai-eval explain data.csv --target y --index 3 --model forest --technique kernel_shap

  # Recompute the aggregate table from raw records
  tabular-xai-eval report results/records.jsonl --format json

  # Correlate metrics with feature count, ignoring very wide datasets
  tabular-xai-eval correlate results/records.jsonl results/summary.json --max-features 150
"""


def _add_seed_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int,
        help="Master seed (can also use XAIEVAL_SEED env var)",
    )
    parser.add_argument(
        "--env-file", "-e", dest="env_file",
        help="Path to .env file providing XAIEVAL_SEED",
    )


def _add_run_parser(subparsers) -> None:
    parser = subparsers.add_parser("run", help="Run the full benchmark from a config file")
    parser.add_argument("config", help="Path to the JSON run configuration")
    parser.add_argument(
        "--out", "-o", default="results",
        help="Output directory (default: results)",
    )
    parser.add_argument(
        "--parallelism", "-p", type=int,
        help="Worker count (overrides the config value)",
    )
    _add_seed_arguments(parser)


def _add_explain_parser(subparsers) -> None:
    parser = subparsers.add_parser("explain", help="Explain and score a single sample")
    parser.add_argument("dataset", help="Path to a CSV dataset")
    parser.add_argument(
        "--target", "-t", required=True,
        help="Name of the class label column",
    )
    parser.add_argument(
        "--index", "-i", type=int, required=True,
        help="Row index (0-based, header excluded)",
    )
    parser.add_argument(
        "--model", "-m", default="logistic",
        help=f"Model family: {', '.join(FAMILIES)} (default: logistic)",
    )
    parser.add_argument(
        "--technique", default="feature_ablation",
        help=f"Technique: {', '.join(TECHNIQUES)} (default: feature_ablation)",
    )
    parser.add_argument(
        "--model-cache", dest="model_cache",
        help="Model document to reuse, or to write after training",
    )
    parser.add_argument(
        "--tune", action="store_true",
        help="Tune hyperparameters instead of using the defaults",
    )
    parser.add_argument("--n-trials", dest="n_trials", type=int, default=30,
                        help="Tuning trials with --tune (default: 30)")
    parser.add_argument("--n-samples", dest="n_samples", type=int, default=200,
                        help="Explainer sample count (default: 200)")
    parser.add_argument("--n-perturb", dest="n_perturb", type=int, default=20,
                        help="Sensitivity perturbations (default: 20)")
    _add_seed_arguments(parser)


def _add_report_parser(subparsers) -> None:
    parser = subparsers.add_parser("report", help="Recompute the aggregate table from raw records")
    parser.add_argument("records", help="Path to records.jsonl")
    parser.add_argument(
        "--format", "-f", dest="fmt", default="csv",
        help="Output format: csv or json (default: csv)",
    )
    parser.add_argument("--out", "-o", help="Write to this file instead of standard output")


def _add_correlate_parser(subparsers) -> None:
    parser = subparsers.add_parser("correlate", help="Correlate metrics with dataset feature count")
    parser.add_argument("records", help="Path to records.jsonl")
    parser.add_argument("summary", help="Path to summary.json")
    parser.add_argument("--out", "-o", default=".", help="Output directory (default: current)")
    parser.add_argument(
        "--max-features", dest="max_features", type=int,
        help="Leave out datasets with more features than this",
    )


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def cmd_run(parsed_args) -> int:
    """Run the benchmark and write every output file.

    Returns:
        0 on success, 1 if any dataset failed (outputs are still written),
        2 on a config error
    """
    try:
        config = load_run_config(
            parsed_args.config, seed=parsed_args.seed, env_file=parsed_args.env_file
        )
    except ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if parsed_args.parallelism is not None and parsed_args.parallelism < 1:
        print("--parallelism must be at least 1", file=sys.stderr)
        return EXIT_USAGE

    callback = _print_progress if parsed_args.verbose else None
    report = run_benchmark(config, parallelism=parsed_args.parallelism, progress_callback=callback)
    try:
        paths = write_outputs(parsed_args.out, report)
    except OSError as e:
        print(f"Cannot write outputs: {e}", file=sys.stderr)
        return EXIT_FAILURE

    _print_run_summary(report, paths, parsed_args.out)
    if report.failures:
        for failure in report.failures:
            print(f"Dataset {failure.dataset} failed: {failure.error}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _print_progress(progress: BenchmarkProgress) -> None:
    print(f"[{progress.datasets_done}/{progress.total_datasets}] {progress.current_step}")


def _print_run_summary(report, paths: dict, out: str) -> None:
    print()
    print("Benchmark complete!")
    print(f"  Datasets: {len(report.summaries)} ok, {len(report.failures)} failed")
    print(f"  Records: {len(report.records)}")
    print(f"  Aggregate rows: {len(report.aggregate)}")
    print(f"  Output: {out}")
    for name in sorted(paths):
        print(f"    {name}")


def cmd_explain(parsed_args) -> int:
    """Explain one row and print the attribution and metric values as JSON.

    Returns:
        0 on success, 1 on a data or model failure, 2 on invalid arguments
    """
    if parsed_args.technique not in TECHNIQUES:
        print(
            f"Unknown technique '{parsed_args.technique}'. "
            f"Choose from: {', '.join(TECHNIQUES)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if parsed_args.model not in FAMILIES:
        print(
            f"Unknown model '{parsed_args.model}'. Choose from: {', '.join(FAMILIES)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        seed = resolve_seed(parsed_args.seed, env_file=parsed_args.env_file)
    except ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        document = _explain_sample(parsed_args, seed)
    except RowIndexError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, ExplainError, MetricError) as e:
        print(f"Explain failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(document, sort_keys=True, indent=2))
    return EXIT_OK


def _explain_sample(parsed_args, seed: int) -> dict:
    """Split and preprocess the way the benchmark does, then explain one row."""
    path = Path(parsed_args.dataset)
    name = path.stem
    table = load_csv(path, parsed_args.target)
    index = parsed_args.index
    if not 0 <= index < table.n_rows:
        raise RowIndexError(f"Sample index {index} out of range for {table.n_rows} rows")

    schema = infer_schema(table)
    y = encode_target(schema, table)
    split = stratified_split(y, seed=derive_seed(seed, name, "split"))
    train_rows = table.take(split.train)
    state = fit_preprocessor(train_rows, schema)
    X_train = transform(state, train_rows)
    x = transform(state, table.take([index])).values[0]

    model = _obtain_model(
        parsed_args, X_train, y[split.train], schema.n_classes, state.fingerprint(), seed, name
    )
    technique = parsed_args.technique
    baseline = mean_baseline(X_train)
    explain_config = ExplainConfig(
        n_samples=parsed_args.n_samples,
        seed=derive_seed(seed, name, "explain", index, technique),
        baseline=baseline,
    )
    attribution = explain(technique, model, x, explain_config, sample_id=index)
    metric_config = MetricConfig(
        n_perturb=parsed_args.n_perturb,
        seed=derive_seed(seed, name, "sensitivity", index, technique),
    )
    values = evaluate_all(
        model, x, attribution, baseline,
        make_explainer(technique, model, explain_config), metric_config,
    )
    document = attribution.to_record(name, parsed_args.model)
    document.update(
        seed=seed,
        feature_names=list(X_train.feature_names),
        metrics={metric: values[metric].value for metric in METRICS},
        reasons={m: values[m].reason for m in METRICS if values[m].reason},
    )
    document["class"] = schema.classes[attribution.explained_class]
    return document


def _obtain_model(
    parsed_args,
    X_train,
    y_train,
    n_classes: int,
    preprocessing_hash: str,
    seed: int,
    name: str,
) -> Predictor:
    """Load a cached model matching family and preprocessing, or train one."""
    family = parsed_args.model
    cache = Path(parsed_args.model_cache) if parsed_args.model_cache else None
    if cache is not None and cache.exists():
        model, document = load_model(cache)
        same_family = document.get("family") == family
        if same_family and document.get("preprocessing_hash") == preprocessing_hash:
            logger.info("Using cached model %s", cache)
            return model
        logger.warning("Cached model %s does not match this data; retraining", cache)

    if parsed_args.tune:
        params = tune(
            family, X_train, y_train, n_trials=parsed_args.n_trials,
            seed=derive_seed(seed, name, "tune"), n_classes=n_classes,
        ).best_params
    else:
        params = dict(DEFAULT_PARAMS[family])
    train_seed = derive_seed(seed, name, "train", family)
    model = train_model(family, X_train, y_train, params, seed=train_seed, n_classes=n_classes)
    if cache is not None:
        save_model(cache, model_to_dict(model, family, params, train_seed, preprocessing_hash))
    return model


def cmd_report(parsed_args) -> int:
    """Recompute the aggregate table from a records file.

    Returns:
        0 on success, 1 on a malformed or unreadable records file, 2 on a bad format
    """
    if parsed_args.fmt not in REPORT_FORMATS:
        print(
            f"Unknown format '{parsed_args.fmt}'. Choose from: {', '.join(REPORT_FORMATS)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        records = read_records(parsed_args.records)
    except ReportError as e:
        print(f"Report error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    text = render_aggregate(aggregate(records), parsed_args.fmt)
    if parsed_args.out:
        Path(parsed_args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_correlate(parsed_args) -> int:
    """Write correlation.csv and points.csv from records plus per-dataset summaries.

    Returns:
        0 on success, 1 with fewer than three datasets or unreadable inputs
    """
    try:
        records = read_records(parsed_args.records)
        summaries = read_summary(parsed_args.summary)
    except ReportError as e:
        print(f"Report error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    feature_counts = {s.dataset: s.n_features for s in summaries}
    try:
        result = feature_count_correlation(
            dataset_metric_means(records), feature_counts, max_features=parsed_args.max_features
        )
    except BenchmarkError as e:
        print(f"Cannot correlate: {e}", file=sys.stderr)
        return EXIT_FAILURE

    rows = result.rows + f1_metric_correlation(records)
    out = Path(parsed_args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_correlations(out / CORRELATION_FILE, rows)
    write_points(out / POINTS_FILE, result.points)

    for row in rows:
        value = f"{row.r:+.3f}" if row.r is not None else f"missing ({row.reason})"
        print(f"  {row.metric:<16} vs {row.against:<13} r = {value}  (n={row.n_points})")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "explain": cmd_explain,
    "report": cmd_report,
    "correlate": cmd_correlate,
}


def main(args: list[str] | None = None) -> int:
    """Main entry point for the CLI.

    Args:
        args: Command line arguments (uses sys.argv if None)

    Returns:
        Exit code (0 success, 1 failure, 2 usage or config error)
    """
    parser = create_parser()
    parsed_args = parser.parse_args(args)
    configure_logging(parsed_args.verbose)
    try:
        return COMMANDS[parsed_args.command](parsed_args)
    except KeyboardInterrupt:
        print("\nOperation cancelled.")
        return 130


if __name__ == "__main__":
    sys.exit(main())
