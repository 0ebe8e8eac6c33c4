"""Tests for benchmark output files."""

import json

import pandas as pd
import pytest

from tabular_xai_eval.bench import (
    AGGREGATE_COLUMNS,
    BenchmarkReport,
    CorrelationRow,
    DatasetFailure,
    DatasetSummary,
    ModelSummary,
    aggregate,
)
from tabular_xai_eval.metrics import MetricRecord
from tabular_xai_eval.models import EvalScores
from tabular_xai_eval.report import (
    AGGREGATE_FILE,
    MANIFEST_FILE,
    RECORDS_FILE,
    SUMMARY_FILE,
    ReportError,
    read_records,
    read_summary,
    render_aggregate,
    write_outputs,
    write_records,
    write_summary,
)


@pytest.fixture
def records():
    return [
        MetricRecord(
            dataset="iris", model="forest", technique="lime", sample_id=3, group="correct",
            metric="complexity", value=0.9, reason=None, f1=0.91, f1_bin="90-95",
        ),
        MetricRecord(
            dataset="iris", model="forest", technique="lime", sample_id=4, group="correct",
            metric="faithfulness", value=None, reason="degenerate-correlation", f1=0.91,
            f1_bin="90-95",
        ),
        MetricRecord(
            dataset="iris", model="forest", technique="lime", sample_id=4, group="correct",
            metric="faithfulness", value=0.25, reason=None, f1=0.91, f1_bin="90-95",
        ),
    ]


@pytest.fixture
def summary():
    return DatasetSummary(
        dataset="iris", path="iris.csv", checksum="abc", n_rows=150, n_features=4, n_classes=3,
        n_train=120, n_test=30, preprocessing_hash="def",
        models={
            "forest": ModelSummary(
                scores=EvalScores(f1=0.91, precision=0.92, recall=0.9, accuracy=0.93),
                params={"n_trees": 50}, tuned=True, f1_bin="90-95",
            )
        },
        group_sizes={"correct": 27, "wrong": 1},
        selected={"correct": [3, 4], "wrong": [7]},
    )


class TestRecordsFile:
    """Tests for write_records and read_records."""

    def test_round_trip(self, tmp_path, records):
        """Written records read back unchanged."""
        path = tmp_path / RECORDS_FILE
        write_records(path, records)
        assert read_records(path) == records

    def test_one_sorted_object_per_line(self, tmp_path, records):
        """Each line is a JSON object with sorted keys; missing values are null."""
        path = tmp_path / RECORDS_FILE
        write_records(path, records)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        second = json.loads(lines[1])
        assert list(second) == sorted(second)
        assert second["value"] is None
        assert second["reason"] == "degenerate-correlation"

    def test_blank_lines_skipped(self, tmp_path, records):
        """Blank lines are ignored."""
        path = tmp_path / RECORDS_FILE
        write_records(path, records[:1])
        path.write_text("\n" + path.read_text() + "\n\n")
        assert len(read_records(path)) == 1

    def test_invalid_json_reports_line(self, tmp_path, records):
        """A malformed line is reported with its line number."""
        path = tmp_path / RECORDS_FILE
        write_records(path, records[:1])
        path.write_text(path.read_text() + "{broken\n")
        with pytest.raises(ReportError, match="invalid JSON") as excinfo:
            read_records(path)
        assert excinfo.value.line_number == 2

    def test_missing_fields(self, tmp_path):
        """Records without required keys are rejected."""
        path = tmp_path / RECORDS_FILE
        path.write_text('{"dataset": "iris"}\n')
        with pytest.raises(ReportError, match="missing fields") as excinfo:
            read_records(path)
        assert excinfo.value.line_number == 1

    def test_not_an_object(self, tmp_path):
        """Each line must hold an object."""
        path = tmp_path / RECORDS_FILE
        path.write_text("[1, 2]\n")
        with pytest.raises(ReportError, match="not an object"):
            read_records(path)

    def test_missing_file(self, tmp_path):
        """An absent file is a ReportError."""
        with pytest.raises(ReportError, match="Cannot read"):
            read_records(tmp_path / "absent.jsonl")


class TestRenderAggregate:
    """Tests for render_aggregate."""

    def test_csv(self, records):
        """CSV output has the aggregate columns and one row per key."""
        text = render_aggregate(aggregate(records), "csv")
        lines = text.splitlines()
        assert lines[0] == ",".join(AGGREGATE_COLUMNS)
        assert len(lines) == 3
        assert text.endswith("\n")

    def test_csv_parses_back(self, tmp_path, records):
        """CSV values parse back to the reported numbers."""
        path = tmp_path / AGGREGATE_FILE
        path.write_text(render_aggregate(aggregate(records), "csv"))
        frame = pd.read_csv(path)
        faithfulness = frame[frame["metric"] == "faithfulness"].iloc[0]
        assert faithfulness["mean"] == -0.25
        assert faithfulness["missing_count"] == 1

    def test_json(self, records):
        """JSON output wraps the rows."""
        document = json.loads(render_aggregate(aggregate(records), "json"))
        assert [row["metric"] for row in document["rows"]] == ["complexity", "faithfulness"]

    def test_empty(self):
        """No rows still renders a header."""
        assert render_aggregate([], "csv") == ",".join(AGGREGATE_COLUMNS) + "\n"

    def test_unknown_format(self):
        """Only csv and json are supported."""
        with pytest.raises(ReportError, match="Unknown report format"):
            render_aggregate([], "xlsx")


class TestSummaryFile:
    """Tests for write_summary and read_summary."""

    def test_round_trip(self, tmp_path, summary):
        """Summaries survive a write/read cycle."""
        path = tmp_path / SUMMARY_FILE
        write_summary(path, [summary], [DatasetFailure("adult", "DataError: boom")])
        restored = read_summary(path)
        assert [s.to_dict() for s in restored] == [summary.to_dict()]
        assert json.loads(path.read_text())["failures"][0]["dataset"] == "adult"

    def test_malformed(self, tmp_path):
        """A document without datasets is rejected."""
        path = tmp_path / SUMMARY_FILE
        path.write_text('{"failures": []}')
        with pytest.raises(ReportError, match="Malformed summary"):
            read_summary(path)

    def test_invalid_json(self, tmp_path):
        """Invalid JSON reports its line."""
        path = tmp_path / SUMMARY_FILE
        path.write_text("{\n  oops\n}")
        with pytest.raises(ReportError) as excinfo:
            read_summary(path)
        assert excinfo.value.line_number == 2


class TestWriteOutputs:
    """Tests for write_outputs."""

    def test_writes_every_file(self, tmp_path, records, summary):
        """All six files are written into a created directory."""
        report = BenchmarkReport(
            records=records,
            aggregate=aggregate(records),
            correlations=[CorrelationRow("complexity", "f1", None, 1, "too-few-points")],
            points=[],
            summaries=[summary],
            failures=[],
            manifest={"master_seed": 0},
        )
        paths = write_outputs(tmp_path / "out" / "nested", report)
        assert len(paths) == 6
        assert all(path.exists() for path in paths.values())
        assert json.loads(paths[MANIFEST_FILE].read_text()) == {"master_seed": 0}
        assert read_records(paths[RECORDS_FILE]) == records
