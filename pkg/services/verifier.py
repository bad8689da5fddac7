"""
Execution Verifier: staged validation of a candidate policy.

1. structural: identifiers, param ranges, divisor safety, slice range, depth
2. starvation/fairness: monotonicity in wait time, adversarial floods, Jain floor
3. dynamic: candidate vs baseline on a workload suite

Stages run in order and a failed stage stops the pipeline. Stages report
findings; they never raise.
"""

import logging
import math
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from scheduler.canonical import content_hash
from scheduler.dsl.expr import depth, identifiers, referenced_features, render_expr
from scheduler.dsl.intervals import interval_of, unsafe_divisions
from scheduler.dsl.policy import MAX_DEPTH, SLICE_MAX, SLICE_MIN, PolicySpec, policy_id
from scheduler.errors import SchedCPError
from scheduler.metrics import compute_delta, goal_improvement_pct
from scheduler.models import FAMILY_GOALS, FEATURES, USEC_PER_SEC, MetricsReport, TaskSpec, WorkloadSpec
from scheduler.sim.engine import SimResult, SimulationCache, simulate
from scheduler.sim.workloads import smoke_build_dag, smoke_latency_chain

logger = logging.getLogger(__name__)

Severity = Literal["error", "warning", "info"]


class Finding(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    severity: Severity = "error"
    message: str
    witness: Optional[Dict[str, Any]] = None


class StageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: int
    name: str
    passed: bool
    findings: Tuple[Finding, ...] = ()

    def codes(self) -> Tuple[str, ...]:
        return tuple(f.code for f in self.findings)


def _stage(stage: int, name: str, findings: Sequence[Finding]) -> StageReport:
    passed = not any(f.severity == "error" for f in findings)
    return StageReport(stage=stage, name=name, passed=passed, findings=tuple(findings))


class VerifierConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    starvation_bound_us: int = Field(default=10 * USEC_PER_SEC, gt=0)
    perf_threshold_pct: float = Field(default=5.0, ge=0)
    min_jain: float = Field(default=0.5, gt=0, le=1)
    flood_seconds: int = Field(default=60, gt=0)
    monotonic_bases: int = Field(default=100, ge=1)
    wait_levels: int = Field(default=10, ge=2)


class ValidationReport(BaseModel):
    """Stage reports in execution order plus the measurements of stage 3."""

    model_config = ConfigDict(frozen=True)

    policy_id: str
    policy_name: str
    stages: Tuple[StageReport, ...]
    verdict: Literal["pass", "fail"]
    suite_hash: str
    suite: Tuple[str, ...] = ()
    baseline_id: str
    goal: str
    family: str
    baseline_metrics: Dict[str, MetricsReport] = Field(default_factory=dict)
    candidate_metrics: Dict[str, MetricsReport] = Field(default_factory=dict)
    config: VerifierConfig = Field(default_factory=VerifierConfig)

    def failed_stage(self) -> Optional[int]:
        for stage in self.stages:
            if not stage.passed:
                return stage.stage
        return None

    def codes(self) -> Tuple[str, ...]:
        return tuple(code for stage in self.stages for code in stage.codes())

    def error_codes(self) -> Tuple[str, ...]:
        return tuple(f.code for s in self.stages for f in s.findings if f.severity == "error")


def suite_hash(suite: Sequence[WorkloadSpec], baseline_id: str) -> str:
    """Identity of a validation suite: its workloads in order plus the baseline."""
    return content_hash({"workloads": [w.fingerprint() for w in suite], "baseline": baseline_id})


# Adversarial workloads ------------------------------------------------------

def starvation_flood(
    background_work: int,
    stream_work: int,
    period: int,
    seconds: int = 60,
) -> WorkloadSpec:
    """
    One core, one low-weight background task and a stream of normal-weight
    tasks arriving every ``period`` for ``seconds``. The background id sorts
    first so ties go its way; it is the flood's designated victim.
    """
    tasks = [TaskSpec(id="background", arrival_time=0, total_work=background_work,
                      expected_runtime_hint=background_work, weight=1)]
    span = seconds * USEC_PER_SEC
    i = 0
    while i * period < span:
        tasks.append(TaskSpec(id=f"stream-{i:04d}", arrival_time=i * period, total_work=stream_work,
                              expected_runtime_hint=stream_work, weight=1024))
        i += 1
    return WorkloadSpec(name=f"flood-{background_work}-vs-{stream_work}", family="custom",
                        tasks=tuple(tasks), core_count=1, meta={"adversarial": True, "victim": "background"})


def long_job_flood(seconds: int = 60) -> WorkloadSpec:
    """Stream tasks slightly longer than the background task."""
    return starvation_flood(USEC_PER_SEC, 1_050_000, 1_050_000, seconds)


def short_job_flood(seconds: int = 60) -> WorkloadSpec:
    """Stream tasks slightly shorter than the background task."""
    return starvation_flood(1_050_000, USEC_PER_SEC, USEC_PER_SEC, seconds)


def uniform_workload(n_tasks: int = 16, work: int = 100_000, core_count: int = 4) -> WorkloadSpec:
    tasks = tuple(TaskSpec(id=f"u-{i:02d}", arrival_time=0, total_work=work, expected_runtime_hint=work)
                  for i in range(n_tasks))
    return WorkloadSpec(name=f"uniform-{n_tasks}", family="custom", tasks=tasks, core_count=core_count)


def default_suite(workload: Optional[WorkloadSpec] = None, seed: int = 0) -> List[WorkloadSpec]:
    """The session workload (when given) followed by the two smoke workloads."""
    suite = [workload] if workload is not None else []
    return suite + [smoke_build_dag(seed), smoke_latency_chain(seed)]


class ExecutionVerifier:
    """
    Runs the three stages.

    Args:
        config: thresholds, recorded in every report.
        cache: simulation cache shared with the canary controller; its
            ``simulate_fn`` is the seam tests use for fault injection.
    """

    def __init__(self, config: Optional[VerifierConfig] = None, cache: Optional[SimulationCache] = None):
        self.config = config or VerifierConfig()
        self.cache = cache or SimulationCache()

    # Stage 1 ----------------------------------------------------------------

    def verify_structural(self, spec: PolicySpec) -> StageReport:
        findings: List[Finding] = []
        for expr in spec.expressions():
            for kind, name in sorted(identifiers(expr)):
                if (kind == "feature" and name not in FEATURES) or (kind == "param" and name not in spec.params):
                    findings.append(Finding(code="UNBOUND", message=f"unbound {kind} '{name}'"))
        for name, decl in sorted(spec.params.items()):
            if not decl.in_range():
                findings.append(Finding(code="PARAM_RANGE",
                                        message=f"param {name}={decl.value:g} outside [{decl.min:g}, {decl.max:g}]"))
        if findings:
            # interval analysis needs every identifier bound
            return _stage(1, "structural", findings)

        for label, expr in (("priority", spec.priority_expr), ("slice", spec.slice_expr)):
            if expr is None:
                continue
            d = depth(expr)
            if d > MAX_DEPTH:
                findings.append(Finding(code="DEPTH", message=f"{label} expression depth {d} exceeds {MAX_DEPTH}"))
                continue
            for node in unsafe_divisions(expr, spec.params):
                findings.append(Finding(
                    code="DIVZERO",
                    message=f"divisor of '{render_expr(node)}' in {label} can be zero",
                    witness={"expression": render_expr(node)},
                ))

        if spec.preemptive and spec.slice_expr is None:
            findings.append(Finding(code="SLICE_MISSING", message="preemptive policy has no slice"))
        elif spec.slice_expr is not None and not any(f.code == "DEPTH" for f in findings):
            bounds = interval_of(spec.slice_expr, spec.params)
            if bounds.hi < SLICE_MIN or bounds.lo > SLICE_MAX or math.isnan(bounds.lo):
                findings.append(Finding(
                    code="SLICE_RANGE",
                    message=f"slice range [{bounds.lo:g}, {bounds.hi:g}] lies outside [{SLICE_MIN}, {SLICE_MAX}]",
                ))
            elif bounds.lo < SLICE_MIN or bounds.hi > SLICE_MAX:
                findings.append(Finding(
                    code="SLICE_CLAMPED", severity="warning",
                    message=f"slice range [{bounds.lo:g}, {bounds.hi:g}] is clamped to [{SLICE_MIN}, {SLICE_MAX}]",
                ))
        return _stage(1, "structural", findings)

    # Stage 2 ----------------------------------------------------------------

    def _monotonicity(self, spec: PolicySpec) -> Optional[Finding]:
        used = referenced_features(spec.priority_expr)
        if not spec.preemptive and used <= {"arrival_time"}:
            return None
        if not used & {"wait_time", "now"}:
            return None
        fn = spec.priority_fn()
        rng = np.random.default_rng(0)
        waits = [0.0] + [float(10 ** k) for k in range(2, 2 + self.config.wait_levels - 1)]
        for _ in range(self.config.monotonic_bases):
            base = {
                "arrival_time": float(10 ** rng.uniform(0, 10)),
                "exec_runtime": float(10 ** rng.uniform(0, 10)),
                "vruntime": float(10 ** rng.uniform(0, 10)),
                "expected_runtime": float(10 ** rng.uniform(0, 10)),
                "weight": float(rng.integers(1, 10_001)),
                "wakeup_count": float(rng.integers(0, 100)),
            }
            base["enqueue_time"] = base["arrival_time"] + float(10 ** rng.uniform(0, 6))
            previous = None
            for wait in waits:
                features = dict(base, wait_time=wait, now=base["enqueue_time"] + wait)
                try:
                    value = fn(features)
                except SchedCPError as exc:
                    return Finding(code="STARVATION", message=f"priority fails to evaluate: {exc.message}",
                                   witness={"features": features})
                if previous is not None and value < previous - 1e-9 * max(1.0, abs(previous)):
                    return Finding(
                        code="STARVATION",
                        message="priority decreases as wait_time grows",
                        witness={"features": features, "previous": previous, "value": value},
                    )
                previous = value
        return None

    def _flood(self, spec: PolicySpec, workload: WorkloadSpec) -> Optional[Finding]:
        horizon = 3 * self.config.flood_seconds * USEC_PER_SEC
        try:
            result = simulate(workload, spec, horizon=horizon)
        except SchedCPError as exc:
            return Finding(code="STARVATION", message=f"flood simulation failed: {exc.message}",
                           witness={"workload": workload.model_dump(mode="json")})
        victim = workload.meta.get("victim")
        if victim is not None:
            worst = next(t for t in result.trace if t.task_id == victim)
        else:
            worst = max(result.trace, key=lambda t: (t.max_wait, t.task_id))
        if worst.max_wait >= self.config.starvation_bound_us:
            return Finding(
                code="STARVATION",
                message=(f"task {worst.task_id} waited {worst.max_wait / USEC_PER_SEC:.2f}s under {workload.name}, "
                         f"bound {self.config.starvation_bound_us / USEC_PER_SEC:.2f}s"),
                witness={
                    "workload": workload.model_dump(mode="json"),
                    "task_id": worst.task_id,
                    "max_wait_us": worst.max_wait,
                },
            )
        return None

    def analyze_starvation(self, spec: PolicySpec) -> StageReport:
        findings: List[Finding] = []
        monotonic = self._monotonicity(spec)
        if monotonic is not None:
            findings.append(monotonic)
        for flood in (long_job_flood(self.config.flood_seconds), short_job_flood(self.config.flood_seconds)):
            finding = self._flood(spec, flood)
            if finding is not None:
                findings.append(finding)
                break

        uniform = uniform_workload()
        try:
            result = simulate(uniform, spec)
            jain = result.metrics.jain_fairness if result.metrics else 0.0
        except SchedCPError as exc:
            jain = 0.0
            logger.debug("uniform run of %s failed: %s", spec.name, exc.message)
        if jain < self.config.min_jain:
            findings.append(Finding(
                code="UNFAIR",
                message=f"jain fairness {jain:.3f} below {self.config.min_jain:.2f} on {uniform.name}",
                witness={"workload": uniform.model_dump(mode="json"), "jain_fairness": jain},
            ))
        return _stage(2, "starvation", findings)

    # Stage 3 ----------------------------------------------------------------

    def validate_dynamic(
        self,
        spec: PolicySpec,
        suite: Sequence[WorkloadSpec],
        baseline: PolicySpec,
        goal: Optional[str] = None,
        family: Optional[str] = None,
    ) -> Tuple[StageReport, Dict[str, MetricsReport], Dict[str, MetricsReport]]:
        """Simulate candidate and baseline on every entry; regressions count only on the matching family."""
        family = family or (suite[0].family if suite else "custom")
        goal = goal or FAMILY_GOALS[family]
        findings: List[Finding] = []
        baseline_metrics: Dict[str, MetricsReport] = {}
        candidate_metrics: Dict[str, MetricsReport] = {}

        for workload in suite:
            try:
                candidate = self.cache.run(workload, spec)
            except SchedCPError as exc:
                findings.append(Finding(code="EVAL_ERROR", message=f"{workload.name}: {exc.message}"))
                continue
            for violation in candidate.violations:
                findings.append(Finding(
                    code=violation.code,
                    message=f"{workload.name}: {violation.message}",
                    witness={"workload": workload.name, "time": violation.time, "task_id": violation.task_id},
                ))
            if candidate.incomplete or candidate.metrics is None:
                findings.append(Finding(code="INCOMPLETE", message=f"{workload.name} did not finish"))
                continue
            candidate_metrics[workload.name] = candidate.metrics

            reference: SimResult = self.cache.run(workload, baseline)
            if reference.metrics is None:
                continue
            baseline_metrics[workload.name] = reference.metrics
            if workload.family != family:
                continue
            try:
                delta = compute_delta(candidate.metrics, reference.metrics)
            except SchedCPError as exc:
                findings.append(Finding(code="DEGENERATE", severity="warning", message=exc.message))
                continue
            gain = goal_improvement_pct(goal, delta)
            if gain < -self.config.perf_threshold_pct:
                findings.append(Finding(
                    code="PERF_REGRESSION",
                    message=f"{goal} regresses {-gain:.1f}% on {workload.name} (threshold {self.config.perf_threshold_pct:g}%)",
                    witness={"workload": workload.name, "delta": delta.model_dump()},
                ))
            else:
                findings.append(Finding(code="PERF", severity="info",
                                        message=f"{goal} improves {gain:.1f}% on {workload.name}"))
        return _stage(3, "dynamic", findings), baseline_metrics, candidate_metrics

    # Pipeline ---------------------------------------------------------------

    def run_pipeline(
        self,
        spec: PolicySpec,
        suite: Sequence[WorkloadSpec],
        baseline: PolicySpec,
        goal: Optional[str] = None,
        family: Optional[str] = None,
    ) -> ValidationReport:
        family = family or (suite[0].family if suite else "custom")
        goal = goal or FAMILY_GOALS[family]
        stages: List[StageReport] = []
        baseline_metrics: Dict[str, MetricsReport] = {}
        candidate_metrics: Dict[str, MetricsReport] = {}

        for run in (self.verify_structural, self.analyze_starvation):
            report = run(spec)
            stages.append(report)
            if not report.passed:
                break
        else:
            report, baseline_metrics, candidate_metrics = self.validate_dynamic(spec, suite, baseline, goal, family)
            stages.append(report)

        verdict = "pass" if all(s.passed for s in stages) and len(stages) == 3 else "fail"
        baseline_id = policy_id(baseline)
        result = ValidationReport(
            policy_id=policy_id(spec),
            policy_name=spec.name,
            stages=tuple(stages),
            verdict=verdict,
            suite_hash=suite_hash(suite, baseline_id),
            suite=tuple(w.name for w in suite),
            baseline_id=baseline_id,
            goal=goal,
            family=family,
            baseline_metrics=baseline_metrics,
            candidate_metrics=candidate_metrics,
            config=self.config,
        )
        logger.info("validated %s (%s): %s %s", spec.name, result.policy_id, verdict, list(result.error_codes()))
        return result


_DEFAULT = ExecutionVerifier()


def verify_structural(spec: PolicySpec) -> StageReport:
    return _DEFAULT.verify_structural(spec)


def analyze_starvation(spec: PolicySpec) -> StageReport:
    return _DEFAULT.analyze_starvation(spec)


def validate_dynamic(spec: PolicySpec, suite: Sequence[WorkloadSpec], baseline: PolicySpec, goal: Optional[str] = None):
    return _DEFAULT.validate_dynamic(spec, suite, baseline, goal)
