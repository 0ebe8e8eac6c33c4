"""Benchmark pipeline: consensus groups, sampling, F1 bins, aggregation, correlation."""

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.stats import pearsonr

from . import __version__
from .config import DEFAULT_BIN_EDGES, DatasetSpec, RunConfig
from .data import (
    encode_target,
    fit_preprocessor,
    infer_schema,
    load_csv,
    stratified_split,
    transform,
)
from .explain import ExplainConfig, explain, make_explainer, mean_baseline
from .metrics import METRICS, MetricConfig, MetricRecord, evaluate_all
from .models import EvalScores, Predictor, eval_scores, predict
from .seeding import derive_seed, rng_for
from .tuning import tune, train_model

logger = logging.getLogger(__name__)

GROUPS = ("correct", "wrong")
INVERTED_METRICS = frozenset({"faithfulness"})
MIN_CORRELATION_POINTS = 3

EXCLUDED_BELOW_BINS = "below-lowest-bin"
EXCLUDED_ALL_MISSING = "all-missing"
TOO_FEW_POINTS = "too-few-points"
ZERO_VARIANCE = "zero-variance"


class BenchmarkError(Exception):
    """Exception raised for invalid benchmark input."""

    pass


# Consensus groups and sampling


@dataclass(frozen=True)
class ConsensusGroups:
    """Test positions every model got right, and positions every model got wrong."""

    correct: np.ndarray
    wrong: np.ndarray

    def members(self, group: str) -> np.ndarray:
        if group not in GROUPS:
            raise BenchmarkError(f"Unknown consensus group: {group}")
        return self.correct if group == "correct" else self.wrong


def consensus_groups(predictions: Sequence[np.ndarray], y_true: np.ndarray) -> ConsensusGroups:
    """Split test positions by unanimous correctness across models.

    Positions where models disagree, or only some are right, belong to neither group.

    Raises:
        BenchmarkError: With zero models or mismatched prediction lengths
    """
    if len(predictions) == 0:
        raise BenchmarkError("Consensus groups need at least one model")
    y_true = np.asarray(y_true)
    hits = []
    for column in predictions:
        column = np.asarray(column)
        if column.shape != y_true.shape:
            raise BenchmarkError(
                f"Prediction length {column.shape[0]} does not match labels {y_true.shape[0]}"
            )
        hits.append(column == y_true)
    hits = np.vstack(hits)
    return ConsensusGroups(
        correct=np.flatnonzero(hits.all(axis=0)),
        wrong=np.flatnonzero((~hits).all(axis=0)),
    )


def sample_per_class(
    group: Sequence[int] | np.ndarray,
    labels: np.ndarray,
    k: int = 5,
    seed: int = 0,
) -> list[int]:
    """Pick up to ``k`` members of ``group`` per class by seeded shuffle.

    Output is ordered by class index, then draw order. Each class shuffles with
    its own derived seed, so one class's size never shifts another's draw.

    Raises:
        BenchmarkError: If ``k < 1``
    """
    if k < 1:
        raise BenchmarkError(f"Per-class sample count must be at least 1, got {k}")
    group = np.asarray(group, dtype=int)
    if group.size == 0:
        logger.warning("Consensus group is empty; no samples selected")
        return []
    labels = np.asarray(labels)
    group_labels = labels[group]
    selected: list[int] = []
    for cls in np.unique(group_labels):
        members = group[group_labels == cls]
        rng = rng_for(seed, int(cls))
        selected.extend(int(i) for i in rng.permutation(members)[:k])
    return selected


# F1 bins


def bin_label(lower: float, upper: float) -> str:
    return f"{lower:g}-{upper:g}"


def assign_bin(f1: float, edges: Sequence[float] = DEFAULT_BIN_EDGES) -> str | None:
    """Percent bin label for a macro-F1 in [0, 1], or ``None`` when excluded.

    Bins are half-open ``[lo, hi)`` except the last, which is closed. ``edges``
    are in percent.

    Raises:
        BenchmarkError: If ``f1`` is outside [0, 1]
    """
    if not 0.0 <= f1 <= 1.0:
        raise BenchmarkError(f"F1 must lie in [0, 1], got {f1}")
    percent = round(f1 * 100.0, 9)
    last = len(edges) - 2
    for i, (lower, upper) in enumerate(zip(edges, edges[1:])):
        if lower <= percent < upper or (i == last and percent == upper):
            return bin_label(lower, upper)
    return None


def _bin_order(label: str) -> float:
    return float(label.split("-")[0])


# Aggregation


@dataclass(frozen=True)
class AggregateRow:
    """min/mean/max of reported metric values for one (bin, group, technique, metric)."""

    f1_bin: str
    group: str
    technique: str
    metric: str
    min: float
    mean: float
    max: float
    count: int
    missing_count: int
    n_samples: int
    n_models: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "f1_bin": self.f1_bin,
            "group": self.group,
            "technique": self.technique,
            "metric": self.metric,
            "min": self.min,
            "mean": self.mean,
            "max": self.max,
            "count": self.count,
            "missing_count": self.missing_count,
            "n_samples": self.n_samples,
            "n_models": self.n_models,
        }


AGGREGATE_COLUMNS = tuple(AggregateRow.__dataclass_fields__)


def reported_value(metric: str, value: float) -> float:
    """Orientation used in reports: faithfulness is inverted, the rest are unchanged."""
    return -value if metric in INVERTED_METRICS else value


def _record_key(record: MetricRecord) -> tuple[str, str, str, str]:
    return (record.f1_bin, record.group, record.technique, record.metric)


def _sort_key(key: tuple[str, str, str, str]) -> tuple:
    f1_bin, group, technique, metric = key
    return (_bin_order(f1_bin), f1_bin, group, technique, metric)


def aggregate(records: Iterable[MetricRecord]) -> list[AggregateRow]:
    """Reduce raw records to one row per (bin, group, technique, metric).

    Faithfulness is negated here, once; raw records keep the measured sign.
    Records without a bin are skipped, and keys with no present value are omitted.
    """
    buckets: dict[tuple[str, str, str, str], list[MetricRecord]] = {}
    for record in records:
        if record.f1_bin is None:
            continue
        buckets.setdefault(_record_key(record), []).append(record)

    rows = []
    for key in sorted(buckets, key=_sort_key):
        bucket = buckets[key]
        values = [reported_value(r.metric, r.value) for r in bucket if r.value is not None]
        if not values:
            continue
        low, high = min(values), max(values)
        mean = min(max(math.fsum(values) / len(values), low), high)
        f1_bin, group, technique, metric = key
        rows.append(
            AggregateRow(
                f1_bin=f1_bin,
                group=group,
                technique=technique,
                metric=metric,
                min=low,
                mean=mean,
                max=high,
                count=len(values),
                missing_count=len(bucket) - len(values),
                n_samples=len({(r.dataset, r.sample_id) for r in bucket}),
                n_models=len({(r.dataset, r.model) for r in bucket}),
            )
        )
    return rows


def exclusion_counts(records: Iterable[MetricRecord]) -> dict[str, int]:
    """Records that reach no aggregate row, by reason."""
    below = 0
    present_keys: set[tuple] = set()
    missing_by_key: dict[tuple, int] = {}
    for record in records:
        if record.f1_bin is None:
            below += 1
            continue
        key = _record_key(record)
        if record.value is None:
            missing_by_key[key] = missing_by_key.get(key, 0) + 1
        else:
            present_keys.add(key)
    all_missing = sum(n for key, n in missing_by_key.items() if key not in present_keys)
    return {EXCLUDED_BELOW_BINS: below, EXCLUDED_ALL_MISSING: all_missing}


# Correlation


@dataclass(frozen=True)
class CorrelationRow:
    """Pearson r of one metric against dataset feature count or model F1."""

    metric: str
    against: str
    r: float | None
    n_points: int
    reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "against": self.against,
            "r": self.r,
            "n_points": self.n_points,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class CorrelationPoint:
    """One plot point: a dataset's feature count and its mean metric value."""

    metric: str
    dataset: str
    feature_count: int
    value: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "dataset": self.dataset,
            "feature_count": self.feature_count,
            "value": self.value,
        }


@dataclass(frozen=True)
class CorrelationResult:
    rows: list[CorrelationRow]
    points: list[CorrelationPoint]


def pearson_or_none(xs: Sequence[float], ys: Sequence[float]) -> tuple[float | None, str | None]:
    """Pearson r, or ``None`` with a reason for too few points or zero variance."""
    if len(xs) < MIN_CORRELATION_POINTS:
        return None, TOO_FEW_POINTS
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None, ZERO_VARIANCE
    r = float(pearsonr(x, y).statistic)
    if not np.isfinite(r):
        return None, ZERO_VARIANCE
    return float(np.clip(r, -1.0, 1.0)), None


def dataset_metric_means(records: Iterable[MetricRecord]) -> dict[str, dict[str, float]]:
    """Mean reported value per dataset and metric over all present records."""
    sums: dict[str, dict[str, list[float]]] = {}
    for record in records:
        if record.value is None:
            continue
        values = sums.setdefault(record.dataset, {}).setdefault(record.metric, [])
        values.append(reported_value(record.metric, record.value))
    return {
        dataset: {metric: math.fsum(v) / len(v) for metric, v in by_metric.items()}
        for dataset, by_metric in sums.items()
    }


def feature_count_correlation(
    dataset_means: dict[str, dict[str, float]],
    feature_counts: dict[str, int],
    max_features: int | None = None,
    metrics: Sequence[str] = METRICS,
) -> CorrelationResult:
    """Per-metric Pearson r between dataset feature count and dataset-mean metric.

    Datasets with more than ``max_features`` features are left out when a cap
    is given.

    Raises:
        BenchmarkError: With fewer than three datasets
    """
    datasets = sorted(set(dataset_means) & set(feature_counts))
    if max_features is not None:
        datasets = [d for d in datasets if feature_counts[d] <= max_features]
    if len(datasets) < MIN_CORRELATION_POINTS:
        raise BenchmarkError(
            f"Feature-count correlation needs at least {MIN_CORRELATION_POINTS} datasets, "
            f"got {len(datasets)}"
        )
    rows, points = [], []
    for metric in metrics:
        series = [
            CorrelationPoint(metric, d, int(feature_counts[d]), dataset_means[d][metric])
            for d in datasets
            if metric in dataset_means[d]
        ]
        r, reason = pearson_or_none([p.feature_count for p in series], [p.value for p in series])
        if reason:
            logger.warning("No feature-count correlation for %s: %s", metric, reason)
        rows.append(CorrelationRow(metric, "feature_count", r, len(series), reason))
        points.extend(series)
    return CorrelationResult(rows=rows, points=points)


def f1_metric_correlation(
    records: Iterable[MetricRecord],
    metrics: Sequence[str] = METRICS,
) -> list[CorrelationRow]:
    """Per-metric Pearson r between each model's F1 and its mean metric value."""
    pairs: dict[tuple[str, str], tuple[float, dict[str, list[float]]]] = {}
    for record in records:
        f1, by_metric = pairs.setdefault((record.dataset, record.model), (record.f1, {}))
        if record.value is not None:
            by_metric.setdefault(record.metric, []).append(
                reported_value(record.metric, record.value)
            )
    rows = []
    for metric in metrics:
        xs, ys = [], []
        for key in sorted(pairs):
            f1, by_metric = pairs[key]
            if metric in by_metric:
                xs.append(f1)
                ys.append(math.fsum(by_metric[metric]) / len(by_metric[metric]))
        r, reason = pearson_or_none(xs, ys)
        rows.append(CorrelationRow(metric, "f1", r, len(xs), reason))
    return rows


# Pipeline


@dataclass(frozen=True)
class ModelSummary:
    """Test-set scores and parameters of one trained model."""

    scores: EvalScores
    params: dict[str, Any]
    tuned: bool
    f1_bin: str | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "scores": self.scores.to_dict(),
            "params": self.params,
            "tuned": self.tuned,
            "f1_bin": self.f1_bin,
        }


@dataclass(frozen=True)
class DatasetSummary:
    """Shape, model scores and sampling outcome of one benchmarked dataset."""

    dataset: str
    path: str
    checksum: str
    n_rows: int
    n_features: int
    n_classes: int
    n_train: int
    n_test: int
    preprocessing_hash: str
    models: dict[str, ModelSummary]
    group_sizes: dict[str, int]
    selected: dict[str, list[int]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "path": self.path,
            "checksum": self.checksum,
            "n_rows": self.n_rows,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "preprocessing_hash": self.preprocessing_hash,
            "models": {family: m.to_dict() for family, m in self.models.items()},
            "group_sizes": dict(self.group_sizes),
            "selected": {group: list(ids) for group, ids in self.selected.items()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetSummary":
        return cls(
            dataset=data["dataset"],
            path=data.get("path", ""),
            checksum=data.get("checksum", ""),
            n_rows=int(data.get("n_rows", 0)),
            n_features=int(data["n_features"]),
            n_classes=int(data.get("n_classes", 0)),
            n_train=int(data.get("n_train", 0)),
            n_test=int(data.get("n_test", 0)),
            preprocessing_hash=data.get("preprocessing_hash", ""),
            models={
                family: ModelSummary(
                    scores=EvalScores(**m["scores"]),
                    params=m.get("params", {}),
                    tuned=bool(m.get("tuned", False)),
                    f1_bin=m.get("f1_bin"),
                )
                for family, m in data.get("models", {}).items()
            },
            group_sizes=dict(data.get("group_sizes", {})),
            selected={g: list(ids) for g, ids in data.get("selected", {}).items()},
        )


@dataclass(frozen=True)
class DatasetFailure:
    dataset: str
    error: str

    def to_dict(self) -> dict[str, str]:
        return {"dataset": self.dataset, "error": self.error}


@dataclass
class BenchmarkReport:
    """Everything one benchmark run produces."""

    records: list[MetricRecord]
    aggregate: list[AggregateRow]
    correlations: list[CorrelationRow]
    points: list[CorrelationPoint]
    summaries: list[DatasetSummary]
    failures: list[DatasetFailure]
    manifest: dict[str, Any]

    @property
    def ok(self) -> bool:
        return not self.failures


@dataclass
class BenchmarkProgress:
    """Tracks progress during a benchmark run."""

    total_datasets: int = 0
    datasets_done: int = 0
    records_written: int = 0
    current_step: str = ""
    errors: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class _Task:
    family: str
    technique: str
    group: str
    position: int
    sample_id: int


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class BenchmarkRunner:
    """Runs the benchmark pipeline over every dataset of a RunConfig."""

    def __init__(self, config: RunConfig, parallelism: int | None = None):
        """Initialize the runner.

        Args:
            config: Validated run configuration
            parallelism: Worker count overriding ``config.parallelism``
        """
        self.config = config
        self.seed = config.master_seed
        self.parallelism = max(1, parallelism or config.parallelism)
        self.progress = BenchmarkProgress()

    def run(self, progress_callback: Callable | None = None) -> BenchmarkReport:
        """Run every dataset, then aggregate and correlate.

        A dataset that fails is logged and listed in ``failures``; the run
        continues with the others.
        """
        self.progress = BenchmarkProgress(total_datasets=len(self.config.datasets))
        records: list[MetricRecord] = []
        summaries: list[DatasetSummary] = []
        failures: list[DatasetFailure] = []

        for spec in self.config.datasets:
            self._update_progress(f"Benchmarking {spec.dataset_id}...", progress_callback)
            try:
                summary, dataset_records = self.run_dataset(spec)
            except Exception as e:
                logger.error("Dataset %s failed: %s", spec.dataset_id, e)
                failures.append(DatasetFailure(spec.dataset_id, f"{type(e).__name__}: {e}"))
                self.progress.errors.append(f"{spec.dataset_id}: {e}")
            else:
                summaries.append(summary)
                records.extend(dataset_records)
                self.progress.records_written += len(dataset_records)
            self.progress.datasets_done += 1

        self._update_progress("Aggregating...", progress_callback)
        rows = aggregate(records)
        correlation_note, correlation = self._correlate(records, summaries)
        report = BenchmarkReport(
            records=records,
            aggregate=rows,
            correlations=correlation.rows + f1_metric_correlation(records),
            points=correlation.points,
            summaries=summaries,
            failures=failures,
            manifest={},
        )
        report.manifest = build_manifest(self.config, report, correlation_note)
        self._update_progress("Benchmark complete!", progress_callback)
        return report

    def _update_progress(self, step: str, callback: Callable | None = None) -> None:
        self.progress.current_step = step
        logger.info(step)
        if callback:
            callback(self.progress)

    def _correlate(
        self, records: list[MetricRecord], summaries: list[DatasetSummary]
    ) -> tuple[str, CorrelationResult]:
        counts = {s.dataset: s.n_features for s in summaries}
        try:
            return "computed", feature_count_correlation(dataset_metric_means(records), counts)
        except BenchmarkError as e:
            logger.warning("Skipping feature-count correlation: %s", e)
            return f"skipped: {e}", CorrelationResult(rows=[], points=[])

    def run_dataset(self, spec: DatasetSpec) -> tuple[DatasetSummary, list[MetricRecord]]:
        """Split, preprocess, train, group, sample and score one dataset."""
        config = self.config
        name = spec.dataset_id
        markers = spec.missing_markers
        if markers is None:
            markers = config.missing_markers

        table = load_csv(spec.path, spec.target_name, markers)
        schema = infer_schema(table)
        y = encode_target(schema, table)
        split = stratified_split(y, config.split_ratio, seed=derive_seed(self.seed, name, "split"))
        train_rows, test_rows = table.take(split.train), table.take(split.test)
        state = fit_preprocessor(train_rows, schema)
        X_train, X_test = transform(state, train_rows), transform(state, test_rows)
        y_train, y_test = y[split.train], y[split.test]
        k = schema.n_classes
        logger.info(
            "%s: %d rows, %d features, %d classes", name, table.n_rows, X_train.n_features, k
        )

        models: dict[str, Predictor] = {}
        model_summaries: dict[str, ModelSummary] = {}
        for family in config.models:
            params = config.model_params.get(family)
            tuned = params is None
            if tuned:
                params = tune(
                    family, X_train, y_train, n_trials=config.n_trials,
                    seed=derive_seed(self.seed, name, "tune"), n_classes=k,
                    parallelism=self.parallelism,
                ).best_params
            model = train_model(
                family, X_train, y_train, dict(params),
                seed=derive_seed(self.seed, name, "train", family), n_classes=k,
            )
            scores = eval_scores(y_test, predict(model, X_test), k)
            models[family] = model
            model_summaries[family] = ModelSummary(
                scores=scores,
                params=dict(params),
                tuned=tuned,
                f1_bin=assign_bin(scores.f1, config.bin_edges),
            )
            logger.info("%s/%s: test f1=%.4f", name, family, scores.f1)

        groups = consensus_groups([predict(m, X_test) for m in models.values()], y_test)
        selected = {
            group: sample_per_class(
                groups.members(group), y_test, config.per_class,
                seed=derive_seed(self.seed, name, "sample", group),
            )
            for group in GROUPS
        }

        baseline = mean_baseline(X_train)
        feature_groups = X_train.groups() if config.explain.group_ablation else None
        tasks = [
            _Task(family, technique, group, position, int(split.test[position]))
            for family in models
            for technique in config.techniques
            for group in GROUPS
            for position in selected[group]
        ]

        def score(task: _Task) -> list[MetricRecord]:
            return self._score_task(
                name, task, models[task.family], X_test.values[task.position],
                baseline, feature_groups, model_summaries[task.family],
            )

        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            records = [r for batch in pool.map(score, tasks) for r in batch]

        summary = DatasetSummary(
            dataset=name,
            path=str(spec.path),
            checksum=file_checksum(spec.path),
            n_rows=table.n_rows,
            n_features=X_train.n_features,
            n_classes=k,
            n_train=len(split.train),
            n_test=len(split.test),
            preprocessing_hash=state.fingerprint(),
            models=model_summaries,
            group_sizes={group: int(len(groups.members(group))) for group in GROUPS},
            selected={group: [int(split.test[p]) for p in selected[group]] for group in GROUPS},
        )
        return summary, records

    def _score_task(
        self,
        dataset: str,
        task: _Task,
        model: Predictor,
        x: np.ndarray,
        baseline: np.ndarray,
        feature_groups: tuple[tuple[int, ...], ...] | None,
        model_summary: ModelSummary,
    ) -> list[MetricRecord]:
        settings, metric_settings = self.config.explain, self.config.metric
        explain_config = ExplainConfig(
            n_samples=settings.n_samples,
            kernel_width=settings.kernel_width,
            ridge_lambda=settings.ridge_lambda,
            seed=derive_seed(self.seed, dataset, "explain", task.sample_id, task.technique),
            baseline=baseline,
            groups=feature_groups,
        )
        attribution = explain(task.technique, model, x, explain_config, sample_id=task.sample_id)
        inner_config = replace(
            explain_config, n_samples=metric_settings.inner_n_samples or settings.n_samples
        )
        metric_config = MetricConfig(
            n_perturb=metric_settings.n_perturb,
            lower_bound=metric_settings.lower_bound,
            upper_bound=metric_settings.upper_bound,
            seed=derive_seed(self.seed, dataset, "sensitivity", task.sample_id, task.technique),
            zero_norm_tolerance=metric_settings.zero_norm_tolerance,
        )
        values = evaluate_all(
            model, x, attribution, baseline,
            make_explainer(task.technique, model, inner_config), metric_config,
        )
        return [
            MetricRecord(
                dataset=dataset,
                model=task.family,
                technique=task.technique,
                sample_id=task.sample_id,
                group=task.group,
                metric=metric,
                value=values[metric].value,
                reason=values[metric].reason,
                f1=model_summary.scores.f1,
                f1_bin=model_summary.f1_bin,
            )
            for metric in METRICS
        ]


def build_manifest(config: RunConfig, report: BenchmarkReport, correlation: str) -> dict[str, Any]:
    """Seeds, config hash, checksums and design decisions of a run. No timestamps."""
    return {
        "version": __version__,
        "master_seed": config.master_seed,
        "config_hash": config_hash(config),
        "config": config.model_dump(mode="json"),
        "datasets": {s.dataset: {"path": s.path, "sha256": s.checksum} for s in report.summaries},
        "failures": [f.to_dict() for f in report.failures],
        "n_records": len(report.records),
        "exclusions": exclusion_counts(report.records),
        "decisions": {
            "baseline": "train-feature-mean",
            "bin_by": "per-model-test-f1",
            "bins_below_lowest_edge": "excluded-from-aggregate",
            "explained_class": "predicted",
            "faithfulness_reported": "inverted",
            "feature_count_correlation": correlation,
            "group_ablation": config.explain.group_ablation,
            "inner_n_samples": config.metric.inner_n_samples or config.explain.n_samples,
            "sample_id": "original-row-index",
            "sensitivity_norm": "relative-with-absolute-fallback",
            "split_ratio": config.split_ratio,
            "tuning": {
                family: "fixed" if family in config.model_params else "seeded-random-search"
                for family in config.models
            },
        },
    }


def run_benchmark(
    config: RunConfig,
    parallelism: int | None = None,
    progress_callback: Callable | None = None,
) -> BenchmarkReport:
    """Run the full benchmark for ``config``."""
    return BenchmarkRunner(config, parallelism=parallelism).run(progress_callback)
