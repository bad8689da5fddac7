"""
Metrics arithmetic: aggregate a completion trace into a MetricsReport and
compare two reports as signed percentage deltas.
"""

import math
from collections import defaultdict
from typing import Dict, Iterable, List, Sequence

from scheduler.errors import DegenerateBaseline, EmptyTrace, InvalidWorkload
from scheduler.models import USEC_PER_SEC, MetricsReport, PerformanceDelta, TaskTrace

CompletionTrace = Sequence[TaskTrace]


def nearest_rank(sorted_values: Sequence[int], pct: float) -> int:
    """Nearest-rank percentile of an ascending sequence."""
    if not sorted_values:
        return 0
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def jain_index(values: Sequence[float]) -> float:
    """(sum x)^2 / (n * sum x^2); 1.0 for an all-equal vector."""
    total = sum(values)
    squares = sum(v * v for v in values)
    if not values or squares <= 0:
        return 1.0
    return min(1.0, (total * total) / (len(values) * squares))


def compute_metrics(trace: CompletionTrace, core_count: int, elapsed: int) -> MetricsReport:
    """
    Aggregate a simulator trace.

    Args:
        trace: every task the run saw; entries without ``completion`` count
            toward waits and utilization but not toward latency.
        core_count: cores of the simulated machine.
        elapsed: simulated span in microseconds.

    Returns:
        MetricsReport with nearest-rank percentiles.
    """
    done = [t for t in trace if t.completion is not None]
    if not done:
        raise EmptyTrace("trace has no completed tasks")
    for t in done:
        if t.release is not None and t.release > t.completion:
            raise InvalidWorkload(f"task {t.task_id} completes before its wakeup")

    start = min(t.arrival for t in trace)
    end = max(t.completion for t in done)
    makespan = end - start
    span = max(elapsed, makespan, 1)

    latencies = sorted(t.completion - (t.release if t.release is not None else t.arrival) for t in done)
    delays = sorted(
        t.first_run - t.release for t in done if t.first_run is not None and t.release is not None
    )

    # a job is complete only when all of its tasks are
    jobs: Dict[str, List[TaskTrace]] = defaultdict(list)
    for t in trace:
        jobs[t.job or t.task_id].append(t)
    job_times = [
        max(m.completion for m in members) - min(m.arrival for m in members)
        for members in jobs.values()
        if all(m.completion is not None for m in members)
    ]
    if not job_times:
        job_times = [t.completion - t.arrival for t in done]

    waits: Dict[int, int] = {}
    for t in trace:
        waits[t.weight] = max(waits.get(t.weight, 0), t.max_wait)

    shares = [t.exec_runtime / max(1, t.completion - (t.release or t.arrival)) for t in done]
    busy = sum(t.exec_runtime for t in trace)

    return MetricsReport(
        makespan=makespan,
        avg_completion=sum(job_times) / len(job_times),
        latency_p50=nearest_rank(latencies, 50),
        latency_p95=nearest_rank(latencies, 95),
        latency_p99=nearest_rank(latencies, 99),
        throughput=len(done) / (span / USEC_PER_SEC),
        max_wait_by_weight=dict(sorted(waits.items())),
        jain_fairness=jain_index(shares) if any(shares) else 1.0,
        cpu_utilization=min(1.0, max(0.0, busy / (core_count * span))),
        completed=len(done),
        incomplete=len(done) < len(trace),
        sched_delay_p99=nearest_rank(delays, 99),
    )


_DELTA_FIELDS = (
    ("throughput_pct", "throughput"),
    ("p99_pct", "latency_p99"),
    ("makespan_pct", "makespan"),
    ("avg_completion_pct", "avg_completion"),
)


def compute_delta(candidate: MetricsReport, baseline: MetricsReport) -> PerformanceDelta:
    """Signed percent change of ``candidate`` relative to ``baseline``."""
    values = {}
    for name, attr in _DELTA_FIELDS:
        base = float(getattr(baseline, attr))
        if base <= 0:
            raise DegenerateBaseline(f"baseline {attr} is {base}", {"field": attr})
        values[name] = 100.0 * (float(getattr(candidate, attr)) - base) / base
    return PerformanceDelta(**values)


def goal_metric(goal: str, report: MetricsReport) -> float:
    """The scalar a goal optimizes."""
    return {
        "min_makespan": float(report.makespan),
        "min_p99": float(report.latency_p99),
        "min_avg_completion": float(report.avg_completion),
        "max_throughput": float(report.throughput),
    }[goal]


def goal_improvement_pct(goal: str, delta: PerformanceDelta) -> float:
    """Improvement in percent for ``goal``; positive is better, negative is a regression."""
    return {
        "min_makespan": -delta.makespan_pct,
        "min_p99": -delta.p99_pct,
        "min_avg_completion": -delta.avg_completion_pct,
        "max_throughput": delta.throughput_pct,
    }[goal]


def relative_gain_pct(goal: str, before: float, after: float) -> float:
    """Improvement of ``after`` over ``before`` for ``goal`` (positive = better)."""
    if before <= 0:
        return 0.0
    change = 100.0 * (after - before) / before
    return change if goal == "max_throughput" else -change


def mean_report(reports: Iterable[MetricsReport]) -> MetricsReport:
    """Field-wise mean of several reports (seed averaging, canary windows)."""
    items = list(reports)
    if not items:
        raise EmptyTrace("no reports to average")
    n = len(items)

    def avg(attr: str) -> float:
        return sum(float(getattr(r, attr)) for r in items) / n

    weights = sorted({w for r in items for w in r.max_wait_by_weight})
    return MetricsReport(
        makespan=round(avg("makespan")),
        avg_completion=avg("avg_completion"),
        latency_p50=round(avg("latency_p50")),
        latency_p95=round(avg("latency_p95")),
        latency_p99=round(avg("latency_p99")),
        throughput=avg("throughput"),
        max_wait_by_weight={
            w: round(sum(r.max_wait_by_weight.get(w, 0) for r in items) / n) for w in weights
        },
        jain_fairness=min(1.0, avg("jain_fairness")),
        cpu_utilization=min(1.0, avg("cpu_utilization")),
        completed=round(avg("completed")),
        incomplete=any(r.incomplete for r in items),
        sched_delay_p99=round(avg("sched_delay_p99")),
    )
