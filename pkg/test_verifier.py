import pytest

from scheduler.dsl.expr import FeatureRef, Neg
from scheduler.dsl.library import builtin, compose
from scheduler.dsl.parser import parse_policy
from scheduler.dsl.policy import PolicySpec, policy_id
from scheduler.models import USEC_PER_SEC, TaskSpec, WorkloadSpec
from services.verifier import (
    ExecutionVerifier,
    VerifierConfig,
    default_suite,
    long_job_flood,
    suite_hash,
)

LJF_AGED = compose(["longest_first", "aging"], [1.0, 0.01], name="ljf_aged")


@pytest.fixture(scope="module")
def verifier():
    return ExecutionVerifier()


# Stage 1 -------------------------------------------------------------------

def test_builtins_are_structurally_sound(verifier):
    for name in ("fifo", "fair_vruntime", "layered_weight"):
        assert verifier.verify_structural(builtin(name)).passed


def test_divisor_that_can_be_zero(verifier):
    report = verifier.verify_structural(parse_policy("name = risky\npriority = 1 / exec_runtime\n"))
    assert not report.passed
    assert report.codes() == ("DIVZERO",)
    assert report.findings[0].witness == {"expression": "1.0 / exec_runtime"}


def test_weight_is_a_safe_divisor(verifier):
    assert verifier.verify_structural(parse_policy("priority = 1 / weight\n")).passed


def test_depth_limit(verifier):
    expr = FeatureRef(name="vruntime")
    for _ in range(40):
        expr = Neg(arg=expr)
    report = verifier.verify_structural(PolicySpec(name="deep", priority_expr=expr))
    assert "DEPTH" in report.codes()
    assert not report.passed


def test_slice_out_of_range(verifier):
    spec = parse_policy(
        "preemptive = true\nparam q = 200000 in [150000, 300000]\npriority = -vruntime\nslice = q\n"
    )
    assert verifier.verify_structural(spec).codes() == ("SLICE_RANGE",)


def test_unbounded_slice_is_only_clamped(verifier):
    spec = parse_policy("preemptive = true\npriority = -vruntime\nslice = exec_runtime\n")
    report = verifier.verify_structural(spec)
    assert report.passed
    assert report.codes() == ("SLICE_CLAMPED",)


# Stage 2 -------------------------------------------------------------------

def test_long_job_first_starves_the_background_task(verifier):
    report = verifier.analyze_starvation(builtin("ljf"))
    assert not report.passed
    finding = report.findings[0]
    assert finding.code == "STARVATION"
    assert finding.witness["task_id"] == "background"
    assert finding.witness["max_wait_us"] >= 10 * USEC_PER_SEC


def test_aging_repairs_starvation(verifier):
    assert verifier.analyze_starvation(LJF_AGED).passed


def test_fair_share_passes(verifier):
    assert verifier.analyze_starvation(builtin("fair_vruntime")).passed


def test_priority_that_falls_with_waiting(verifier):
    report = verifier.analyze_starvation(parse_policy("priority = expected_runtime - wait_time\n"))
    assert report.codes()[0] == "STARVATION"
    assert "decreases" in report.findings[0].message


def test_flood_workload_shape():
    flood = long_job_flood(10)
    assert flood.core_count == 1
    assert flood.tasks[0].id == "background" and flood.tasks[0].weight == 1
    assert flood.meta["victim"] == "background"
    assert all(t.total_work > flood.tasks[0].total_work for t in flood.tasks[1:])


def test_flood_measures_its_victim(verifier):
    def flood(meta):
        return WorkloadSpec(
            name="hog-flood",
            tasks=(
                TaskSpec(id="background", arrival_time=0, total_work=USEC_PER_SEC, weight=1),
                TaskSpec(id="hog", arrival_time=0, total_work=20 * USEC_PER_SEC),
                TaskSpec(id="late", arrival_time=1, total_work=USEC_PER_SEC),
            ),
            core_count=1,
            meta=meta,
        )

    # fifo serves the background task first; only "late" waits behind the hog
    assert verifier._flood(builtin("fifo"), flood({"victim": "background"})) is None
    worst = verifier._flood(builtin("fifo"), flood({}))
    assert worst.code == "STARVATION" and worst.witness["task_id"] == "late"


# Stage 3 and the pipeline --------------------------------------------------

def test_pipeline_passes_a_better_policy(verifier, longtail):
    suite = default_suite(longtail)
    report = verifier.run_pipeline(LJF_AGED, suite, builtin("fair_vruntime"))

    assert report.verdict == "pass"
    assert [s.stage for s in report.stages] == [1, 2, 3]
    assert report.goal == "min_avg_completion"
    assert report.family == "batch-longtail"
    assert report.suite_hash == suite_hash(suite, policy_id(builtin("fair_vruntime")))
    assert "PERF" in report.codes()
    assert report.candidate_metrics[longtail.name].makespan == 30 * USEC_PER_SEC


def test_pipeline_stops_at_the_first_failed_stage(verifier, longtail):
    report = verifier.run_pipeline(builtin("ljf"), default_suite(longtail), builtin("fair_vruntime"))
    assert report.verdict == "fail"
    assert report.failed_stage() == 2
    assert len(report.stages) == 2
    assert report.error_codes() == ("STARVATION",)


def test_regression_on_the_matching_family(verifier):
    # a short and a long job: running the long one first doubles the mean completion
    workload = WorkloadSpec(
        name="short-and-long",
        family="custom",
        tasks=(
            TaskSpec(id="long", arrival_time=0, total_work=10 * USEC_PER_SEC, expected_runtime_hint=10 * USEC_PER_SEC),
            TaskSpec(id="short", arrival_time=0, total_work=USEC_PER_SEC, expected_runtime_hint=USEC_PER_SEC),
        ),
        core_count=1,
    )
    report = verifier.run_pipeline(LJF_AGED, [workload], builtin("fair_vruntime"), goal="min_avg_completion")
    assert report.verdict == "fail"
    assert report.failed_stage() == 3
    assert "PERF_REGRESSION" in report.error_codes()


def test_suite_hash_depends_on_the_baseline(longtail):
    suite = default_suite(longtail)
    assert suite_hash(suite, "a") != suite_hash(suite, "b")
    assert suite_hash(suite, "a") == suite_hash(default_suite(longtail), "a")


def test_thresholds_come_from_config(longtail):
    strict = ExecutionVerifier(VerifierConfig(starvation_bound_us=1))
    report = strict.analyze_starvation(builtin("fair_vruntime"))
    assert report.codes() == ("STARVATION",)
