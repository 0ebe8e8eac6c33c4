"""Reading and writing benchmark output files."""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import pandas as pd

from .bench import (
    AGGREGATE_COLUMNS,
    AggregateRow,
    BenchmarkReport,
    CorrelationPoint,
    CorrelationRow,
    DatasetFailure,
    DatasetSummary,
)
from .metrics import MetricRecord

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
AGGREGATE_FILE = "aggregate.csv"
CORRELATION_FILE = "correlation.csv"
POINTS_FILE = "points.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"

REPORT_FORMATS = ("csv", "json")
CORRELATION_COLUMNS = ("metric", "against", "r", "n_points", "reason")
POINT_COLUMNS = ("metric", "dataset", "feature_count", "value")
REQUIRED_RECORD_KEYS = (
    "dataset", "model", "technique", "sample_id", "group", "metric", "value", "f1", "f1_bin",
)


class ReportError(Exception):
    """Exception raised for malformed report files."""

    def __init__(self, message: str, line_number: int | None = None):
        """Initialize the error.

        Args:
            message: Error message
            line_number: 1-based line of the offending record, if any
        """
        super().__init__(message)
        self.line_number = line_number


def _dump(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def write_records(path: str | Path, records: Iterable[MetricRecord]) -> None:
    """One JSON object per line, keys sorted."""
    lines = [json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_records(path: str | Path) -> list[MetricRecord]:
    """Parse a records file; blank lines are skipped.

    Raises:
        ReportError: If the file is unreadable or a line is malformed
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReportError(f"Cannot read records {path}: {e}")
    records = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ReportError(f"{path}:{line_number}: invalid JSON: {e.msg}", line_number)
        if not isinstance(data, dict):
            raise ReportError(f"{path}:{line_number}: record is not an object", line_number)
        missing = [key for key in REQUIRED_RECORD_KEYS if key not in data]
        if missing:
            raise ReportError(
                f"{path}:{line_number}: missing fields {', '.join(missing)}", line_number
            )
        try:
            records.append(MetricRecord.from_dict(data))
        except (TypeError, ValueError) as e:
            raise ReportError(f"{path}:{line_number}: {e}", line_number)
    return records


def aggregate_frame(rows: Sequence[AggregateRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=list(AGGREGATE_COLUMNS))


def render_aggregate(rows: Sequence[AggregateRow], fmt: str = "csv") -> str:
    """The aggregate table as CSV text or as a JSON document ``{"rows": [...]}``.

    Raises:
        ReportError: For an unknown format
    """
    if fmt == "csv":
        return aggregate_frame(rows).to_csv(index=False, lineterminator="\n")
    if fmt == "json":
        return _dump({"rows": [row.to_dict() for row in rows]})
    raise ReportError(f"Unknown report format: {fmt}")


def write_aggregate(path: str | Path, rows: Sequence[AggregateRow], fmt: str = "csv") -> None:
    Path(path).write_text(render_aggregate(rows, fmt), encoding="utf-8")


def write_correlations(path: str | Path, rows: Sequence[CorrelationRow]) -> None:
    frame = pd.DataFrame([row.to_dict() for row in rows], columns=list(CORRELATION_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")


def write_points(path: str | Path, points: Sequence[CorrelationPoint]) -> None:
    frame = pd.DataFrame([p.to_dict() for p in points], columns=list(POINT_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")


def write_summary(
    path: str | Path,
    summaries: Sequence[DatasetSummary],
    failures: Sequence[DatasetFailure] = (),
) -> None:
    document = {
        "datasets": [s.to_dict() for s in summaries],
        "failures": [f.to_dict() for f in failures],
    }
    Path(path).write_text(_dump(document), encoding="utf-8")


def read_summary(path: str | Path) -> list[DatasetSummary]:
    """Load per-dataset summaries written by :func:`write_summary`.

    Raises:
        ReportError: If the file is unreadable or lacks dataset entries
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ReportError(f"Cannot read summary {path}: {e}")
    except json.JSONDecodeError as e:
        raise ReportError(f"{path}:{e.lineno}: invalid JSON: {e.msg}", e.lineno)
    try:
        return [DatasetSummary.from_dict(entry) for entry in document["datasets"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ReportError(f"Malformed summary {path}: {e}")


def write_manifest(path: str | Path, manifest: dict[str, Any]) -> None:
    Path(path).write_text(_dump(manifest), encoding="utf-8")


def write_outputs(out_dir: str | Path, report: BenchmarkReport) -> dict[str, Path]:
    """Write every output file of a run into ``out_dir`` (created if needed).

    Returns:
        Mapping of file name to written path
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        name: out / name
        for name in (RECORDS_FILE, AGGREGATE_FILE, CORRELATION_FILE, POINTS_FILE, SUMMARY_FILE,
                     MANIFEST_FILE)
    }
    write_records(paths[RECORDS_FILE], report.records)
    write_aggregate(paths[AGGREGATE_FILE], report.aggregate)
    write_correlations(paths[CORRELATION_FILE], report.correlations)
    write_points(paths[POINTS_FILE], report.points)
    write_summary(paths[SUMMARY_FILE], report.summaries, report.failures)
    write_manifest(paths[MANIFEST_FILE], report.manifest)
    logger.info("Wrote %d records to %s", len(report.records), out)
    return paths
