"""
Plot-ready exports of simulation results: canonical JSON and flat CSV.
"""

import io
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import pandas as pd

from scheduler.canonical import canonical_json
from scheduler.models import MetricsReport
from scheduler.sim.engine import SimResult

TRACE_COLUMNS = [
    "task_id", "job", "weight", "arrival", "release", "first_run",
    "completion", "exec_runtime", "max_wait", "latency", "sched_delay",
]

METRIC_COLUMNS = [
    "makespan", "avg_completion", "latency_p50", "latency_p95", "latency_p99",
    "throughput", "max_wait", "jain_fairness", "cpu_utilization", "completed",
    "incomplete", "sched_delay_p99",
]


def result_to_json(result: SimResult) -> str:
    return canonical_json(result)


def metrics_row(report: Optional[MetricsReport]) -> Dict[str, object]:
    """Flat metric columns; a run that completed nothing has empty cells and ``incomplete`` set."""
    if report is None:
        return {column: (True if column == "incomplete" else None) for column in METRIC_COLUMNS}
    row = report.model_dump(exclude={"max_wait_by_weight"})
    row["max_wait"] = report.max_wait()
    return {column: row[column] for column in METRIC_COLUMNS}


def trace_frame(result: SimResult) -> pd.DataFrame:
    rows = []
    for t in result.trace:
        row = t.model_dump()
        row["latency"] = t.completion - t.release if t.completion is not None and t.release is not None else None
        row["sched_delay"] = t.first_run - t.release if t.first_run is not None and t.release is not None else None
        rows.append(row)
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    # nullable ints keep "never happened" cells empty instead of NaN floats
    for column in ("release", "first_run", "completion", "latency", "sched_delay"):
        frame[column] = frame[column].astype("Int64")
    return frame


def trace_to_csv(result: SimResult, path: Optional[Union[str, Path]] = None) -> str:
    """Per-task trace as CSV; also written to ``path`` when given."""
    buffer = io.StringIO()
    trace_frame(result).to_csv(buffer, index=False)
    text = buffer.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def metrics_frame(rows: Iterable[Dict[str, object]]) -> pd.DataFrame:
    """Rows of labelled metrics (``workload``, ``policy``, ``seed`` + metric columns)."""
    records: List[Dict[str, object]] = list(rows)
    return pd.DataFrame(records)
