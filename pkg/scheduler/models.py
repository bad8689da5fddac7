"""
Shared domain types: workloads, per-task runtime features, metrics and deltas.

All models are immutable pydantic values and safe to share across threads.
"""

import json
from graphlib import CycleError, TopologicalSorter
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from scheduler.canonical import canonical_json, content_hash
from scheduler.errors import InvalidWorkload

Family = Literal["build-dag", "latency-chain", "batch-longtail", "custom"]
Goal = Literal["min_makespan", "min_p99", "min_avg_completion", "max_throughput"]

FAMILIES: Tuple[str, ...] = ("build-dag", "latency-chain", "batch-longtail", "custom")
GOALS: Tuple[str, ...] = ("min_makespan", "min_p99", "min_avg_completion", "max_throughput")

# Family -> optimization goal mapping table used by classification and stage 3.
FAMILY_GOALS: Dict[str, str] = {
    "build-dag": "min_makespan",
    "latency-chain": "min_p99",
    "batch-longtail": "min_avg_completion",
    "custom": "max_throughput",
}

USEC_PER_SEC = 1_000_000
NICE_0_WEIGHT = 1024

# Features a policy expression may reference, with the ranges used by the
# interval analysis in the structural verifier.
TIME_RANGE = (0.0, float(2 ** 48))
FEATURE_RANGES: Dict[str, Tuple[float, float]] = {
    "arrival_time": TIME_RANGE,
    "enqueue_time": TIME_RANGE,
    "wait_time": TIME_RANGE,
    "exec_runtime": TIME_RANGE,
    "vruntime": TIME_RANGE,
    "expected_runtime": TIME_RANGE,
    "weight": (1.0, 10_000.0),
    "wakeup_count": (0.0, float(2 ** 32)),
    "now": TIME_RANGE,
}
FEATURES: Tuple[str, ...] = tuple(FEATURE_RANGES)


class TaskSpec(BaseModel):
    """One task of a workload. Times are integer microseconds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    arrival_time: int = Field(ge=0)
    total_work: int = Field(gt=0)
    expected_runtime_hint: Optional[int] = Field(default=None, ge=0)
    weight: int = Field(default=NICE_0_WEIGHT, ge=1, le=10_000)
    deps: Tuple[str, ...] = ()
    wake_targets: Tuple[str, ...] = ()
    job: Optional[str] = None

    @field_validator("deps")
    @classmethod
    def _sorted_deps(cls, deps: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(sorted(set(deps)))

    @model_validator(mode="after")
    def _no_self_edges(self) -> "TaskSpec":
        if self.id in self.deps or self.id in self.wake_targets:
            raise ValueError(f"task {self.id} depends on or wakes itself")
        return self


class WorkloadSpec(BaseModel):
    """A reproducible workload: tasks, machine size and seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    family: Family = "custom"
    tasks: Tuple[TaskSpec, ...] = Field(min_length=1)
    core_count: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    horizon: Optional[int] = Field(default=None, gt=0)
    meta: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_graph(self) -> "WorkloadSpec":
        ids = [t.id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise ValueError("task ids must be unique")
        known = set(ids)
        sorter: TopologicalSorter = TopologicalSorter()
        for task in self.tasks:
            for dep in task.deps:
                if dep not in known:
                    raise ValueError(f"task {task.id} depends on unknown task {dep}")
            sorter.add(task.id, *task.deps)
            for target in task.wake_targets:
                if target not in known:
                    raise ValueError(f"task {task.id} wakes unknown task {target}")
                sorter.add(target, task.id)
        try:
            sorter.prepare()
        except CycleError as exc:
            raise ValueError(f"dependency graph has a cycle: {exc.args[1]}") from exc
        return self

    def task_map(self) -> Dict[str, TaskSpec]:
        return {t.id: t for t in self.tasks}

    def canonical(self) -> str:
        return canonical_json(self)

    def fingerprint(self) -> str:
        return content_hash(self)

    @classmethod
    def from_json(cls, text: str) -> "WorkloadSpec":
        try:
            return cls.model_validate(json.loads(text))
        except (ValueError, ValidationError) as exc:
            raise InvalidWorkload(f"invalid workload: {exc}") from exc


class TaskRuntimeState(BaseModel):
    """The feature vector a policy expression is evaluated against."""

    model_config = ConfigDict(frozen=True)

    arrival_time: float = 0.0
    enqueue_time: float = 0.0
    wait_time: float = 0.0
    exec_runtime: float = 0.0
    vruntime: float = 0.0
    expected_runtime: float = 0.0
    weight: float = float(NICE_0_WEIGHT)
    wakeup_count: float = 0.0
    now: float = 0.0

    @model_validator(mode="after")
    def _consistent(self) -> "TaskRuntimeState":
        if self.wait_time < 0 or self.vruntime < 0:
            raise ValueError("wait_time and vruntime must be non-negative")
        return self

    def features(self) -> Dict[str, float]:
        return self.model_dump()


class TaskTrace(BaseModel):
    """Per-task timestamps recorded by the simulator (None = never happened)."""

    model_config = ConfigDict(frozen=True)

    task_id: str
    job: Optional[str] = None
    weight: int = NICE_0_WEIGHT
    arrival: int
    release: Optional[int] = None
    first_run: Optional[int] = None
    completion: Optional[int] = None
    exec_runtime: int = 0
    max_wait: int = 0


class MetricsReport(BaseModel):
    """Aggregate performance of one run. Times in microseconds."""

    model_config = ConfigDict(frozen=True)

    makespan: int = Field(ge=0)
    avg_completion: float = Field(ge=0)
    latency_p50: int = Field(ge=0)
    latency_p95: int = Field(ge=0)
    latency_p99: int = Field(ge=0)
    throughput: float = Field(ge=0)
    max_wait_by_weight: Dict[int, int] = Field(default_factory=dict)
    jain_fairness: float = Field(gt=0, le=1)
    cpu_utilization: float = Field(ge=0, le=1)
    completed: int = Field(default=0, ge=0)
    incomplete: bool = False
    sched_delay_p99: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _monotone(self) -> "MetricsReport":
        if not (self.latency_p50 <= self.latency_p95 <= self.latency_p99 <= self.makespan):
            raise ValueError("percentiles must satisfy p50 <= p95 <= p99 <= makespan")
        return self

    def max_wait(self) -> int:
        return max(self.max_wait_by_weight.values(), default=0)


class PerformanceDelta(BaseModel):
    """Signed percent changes, 100 * (candidate - baseline) / baseline."""

    model_config = ConfigDict(frozen=True)

    throughput_pct: float = 0.0
    p99_pct: float = 0.0
    makespan_pct: float = 0.0
    avg_completion_pct: float = 0.0

    def is_zero(self, tol: float = 1e-9) -> bool:
        return all(abs(v) <= tol for v in self.model_dump().values())


def features_of(state: "TaskRuntimeState | Mapping[str, float]") -> Mapping[str, float]:
    if isinstance(state, TaskRuntimeState):
        return state.features()
    return state
