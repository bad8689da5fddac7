import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from scheduler.canonical import canonical_json, content_hash
from scheduler.dsl.library import builtin
from scheduler.errors import DegenerateBaseline, EmptyTrace
from scheduler.metrics import (
    compute_delta,
    compute_metrics,
    goal_improvement_pct,
    goal_metric,
    jain_index,
    mean_report,
    nearest_rank,
    relative_gain_pct,
)
from scheduler.models import USEC_PER_SEC, MetricsReport, TaskTrace
from scheduler.sim.engine import simulate


def report(**overrides) -> MetricsReport:
    fields = dict(
        makespan=100_000_000,
        avg_completion=50_000_000.0,
        latency_p50=10_000,
        latency_p95=20_000,
        latency_p99=100_000,
        throughput=100.0,
        jain_fairness=1.0,
        cpu_utilization=0.5,
    )
    fields.update(overrides)
    return MetricsReport(**fields)


def test_two_tasks_fifo_completion_times(two_tasks):
    result = simulate(two_tasks, builtin("fifo"))

    assert result.metrics.makespan == 5 * USEC_PER_SEC
    # each task is its own job
    assert result.metrics.avg_completion == pytest.approx(3.5 * USEC_PER_SEC)
    assert result.metrics.completed == 2
    assert result.metrics.cpu_utilization == pytest.approx(1.0)


def test_delta_against_itself_is_zero():
    base = report()
    assert compute_delta(base, base).is_zero()


def test_delta_signs():
    base = report()
    faster = report(makespan=55_000_000, throughput=160.0)
    delta = compute_delta(faster, base)

    assert delta.makespan_pct == pytest.approx(-45.0)
    assert delta.throughput_pct == pytest.approx(60.0)
    assert goal_improvement_pct("min_makespan", delta) == pytest.approx(45.0)
    assert goal_improvement_pct("max_throughput", delta) == pytest.approx(60.0)


def test_zero_baseline_is_degenerate():
    empty = report(makespan=0, latency_p50=0, latency_p95=0, latency_p99=0)
    with pytest.raises(DegenerateBaseline) as excinfo:
        compute_delta(report(), empty)
    assert excinfo.value.details["field"] == "latency_p99"


def test_empty_trace():
    with pytest.raises(EmptyTrace):
        compute_metrics([], core_count=1, elapsed=0)
    never_done = [TaskTrace(task_id="x", arrival=0)]
    with pytest.raises(EmptyTrace):
        compute_metrics(never_done, core_count=1, elapsed=10)


def test_percentiles_must_be_ordered():
    with pytest.raises(ValidationError):
        report(latency_p50=50_000, latency_p95=20_000)


def test_nearest_rank():
    values = list(range(1, 101))
    assert nearest_rank(values, 50) == 50
    assert nearest_rank(values, 99) == 99
    assert nearest_rank(values, 100) == 100
    assert nearest_rank([], 99) == 0
    assert nearest_rank([7], 1) == 7


def test_jain_of_equal_shares_is_one():
    assert jain_index([0.5] * 4) == 1.0
    assert jain_index([1.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25)


@given(st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=50))
def test_jain_bounds(values):
    index = jain_index(values)
    assert 1.0 / len(values) - 1e-9 <= index <= 1.0


def test_goal_metric_and_relative_gain():
    r = report()
    assert goal_metric("min_p99", r) == 100_000
    assert goal_metric("max_throughput", r) == 100.0
    assert relative_gain_pct("min_avg_completion", 34.0, 30.0) == pytest.approx(11.7647, rel=1e-4)
    assert relative_gain_pct("max_throughput", 100.0, 110.0) == pytest.approx(10.0)
    assert relative_gain_pct("min_makespan", 0.0, 10.0) == 0.0


def test_mean_report():
    merged = mean_report([report(makespan=100_000_000), report(makespan=200_000_000, throughput=50.0)])
    assert merged.makespan == 150_000_000
    assert merged.throughput == pytest.approx(75.0)
    with pytest.raises(EmptyTrace):
        mean_report([])


def test_canonical_json_form():
    assert canonical_json({"b": 1, "a": 0.5, "c": [True, None]}) == '{"a":0.500000,"b":1,"c":[true,null]}'
    assert content_hash({"x": 1}) == content_hash({"x": 1})
    assert len(content_hash({"x": 1})) == 16
    with pytest.raises(ValueError):
        canonical_json(float("inf"))
