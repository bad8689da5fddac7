"""
Canary deployments with a circuit breaker.

A deployment alternates measurement windows: a baseline window under the
active baseline policy, then a candidate window under the deployed policy,
compared pairwise on the profile's goal metric. Too many consecutive
degraded windows revert to the baseline; surviving every window promotes.
The only way in is a token that verifies against the server key and the
suite the workload validates on.
"""

import logging
import threading
import time
import uuid
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from scheduler.dsl.policy import PolicySpec, policy_id
from scheduler.errors import InvalidToken, UnknownDeployment, UnknownPolicy, WindowIncomplete
from scheduler.metrics import compute_delta, goal_improvement_pct, goal_metric, mean_report
from scheduler.models import FAMILY_GOALS, Goal, MetricsReport, PerformanceDelta, TaskSpec, WorkloadSpec
from scheduler.sim.engine import SimulationCache
from services.policy_repository import OutcomeRecord, PolicyRepository
from services.tokens import TokenSigner
from services.verifier import default_suite, suite_hash

logger = logging.getLogger(__name__)

# (workload, policy, window index, role) -> metrics of that window
Measure = Callable[[WorkloadSpec, PolicySpec, int, str], MetricsReport]


class CanaryPhase(str, Enum):
    RUNNING = "Running"
    PROMOTED = "Promoted"
    REVERTED = "Reverted"


class CanaryConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold_pct: float = Field(default=10.0, ge=0)
    trip_limit: int = Field(default=3, ge=1)
    windows: int = Field(default=10, ge=1)
    # tasks per window; 0 measures the whole workload each window
    window_size: int = Field(default=0, ge=0)
    # log-normal sigma applied to task work in every window after the first
    work_jitter: float = Field(default=0.05, ge=0, le=1)


class WindowRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    baseline: MetricsReport
    candidate: MetricsReport
    delta: PerformanceDelta
    improvement_pct: float
    tripped: bool


class CanaryState(BaseModel):
    """Live view of one deployment. Only Running moves, to Promoted or Reverted."""

    deployment_id: str
    policy_id: str
    policy_name: str
    baseline_id: str
    baseline_name: str
    workload: str
    fingerprint: str
    goal: Goal
    phase: CanaryPhase = CanaryPhase.RUNNING
    window_size: int
    threshold_pct: float
    trip_limit: int
    windows_planned: int
    consecutive_trips: int = 0
    windows: List[WindowRecord] = Field(default_factory=list)
    active_policy_id: str
    delta: Optional[PerformanceDelta] = None
    started_at: float
    closed_at: Optional[float] = None

    def closed(self) -> bool:
        return self.phase != CanaryPhase.RUNNING

    def goal_values(self) -> List[Tuple[float, float]]:
        """(baseline, candidate) goal metric per window."""
        return [(goal_metric(self.goal, w.baseline), goal_metric(self.goal, w.candidate)) for w in self.windows]


def _jittered(task: TaskSpec, factor: float, offset: int, ids: Optional[set] = None) -> TaskSpec:
    update = {
        "arrival_time": task.arrival_time - offset,
        "total_work": max(1, int(round(task.total_work * factor))),
    }
    if task.expected_runtime_hint is not None:
        update["expected_runtime_hint"] = int(round(task.expected_runtime_hint * factor))
    if ids is not None:
        update["deps"] = tuple(d for d in task.deps if d in ids)
        update["wake_targets"] = tuple(w for w in task.wake_targets if w in ids)
    return task.model_copy(update=update)


def window_workload(workload: WorkloadSpec, index: int, window_size: int = 0, work_jitter: float = 0.0) -> WorkloadSpec:
    """
    The slice of the stream measured in window ``index``.

    With ``window_size`` 0 (or at least the task count) each window replays
    the whole workload under seed ``workload.seed + index``. Otherwise the
    window rotates through the task list; edges leaving the window are
    dropped and arrivals are shifted to start at zero.

    Window 0 is the stream as submitted. Later windows scale each task's work
    (and its hint) by a log-normal factor with sigma ``work_jitter``, drawn
    from the window seed, so no two windows replay the same run. Both
    policies of a window pair see the same draw.
    """
    seed = workload.seed + index
    tasks = workload.tasks
    whole = window_size == 0 or window_size >= len(tasks)
    if whole:
        chosen = list(tasks)
    else:
        start = (index * window_size) % len(tasks)
        chosen = [tasks[(start + i) % len(tasks)] for i in range(window_size)]

    sigma = work_jitter if index > 0 else 0.0
    factors = np.random.default_rng(seed).lognormal(0.0, sigma, size=len(chosen)) if sigma > 0 else np.ones(len(chosen))
    if whole:
        if sigma == 0:
            return workload.model_copy(update={"seed": seed})
        jittered = tuple(_jittered(t, float(f), 0) for t, f in zip(chosen, factors))
        return workload.model_copy(update={"seed": seed, "tasks": jittered})

    ids = {t.id for t in chosen}
    offset = min(t.arrival_time for t in chosen)
    trimmed = tuple(_jittered(t, float(f), offset, ids) for t, f in zip(chosen, factors))
    return WorkloadSpec(
        name=f"{workload.name}-w{index}",
        family=workload.family,
        tasks=trimmed,
        core_count=workload.core_count,
        seed=seed,
        meta=dict(workload.meta, window=index),
    )


class DeploymentRegistry:
    """
    Owns canary states, their measured windows and the closed deltas that
    the analysis engine's feedback channel reports.

    Args:
        repository: receives OutcomeRecords when ``record_outcome`` is set.
        signer: verifies deployment tokens.
        cache: simulation cache used by the default measurer.
        config: defaults for deployments that pass no config.
    """

    def __init__(
        self,
        repository: PolicyRepository,
        signer: TokenSigner,
        cache: Optional[SimulationCache] = None,
        config: Optional[CanaryConfig] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.repository = repository
        self.signer = signer
        self.cache = cache or SimulationCache()
        self.config = config or CanaryConfig()
        self.clock = clock
        self._states: Dict[str, CanaryState] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _measure(self, workload: WorkloadSpec, policy: PolicySpec, index: int, role: str) -> MetricsReport:
        result = self.cache.run(workload, policy)
        if result.metrics is None:
            raise WindowIncomplete(f"window {index} ({role}) of {workload.name} completed no task",
                                   {"window": index, "role": role})
        return result.metrics

    def deploy(
        self,
        token,
        workload: WorkloadSpec,
        baseline: PolicySpec,
        config: Optional[CanaryConfig] = None,
        goal: Optional[Goal] = None,
        fingerprint: Optional[str] = None,
        measure: Optional[Measure] = None,
        record_outcome: bool = True,
    ) -> CanaryState:
        """
        Verify ``token`` and run the canary to a terminal phase.

        The suite hash is recomputed from ``workload`` and ``baseline``, so a
        token validated on another suite raises TokenSuiteMismatch. Nothing
        is registered when verification fails.
        """
        expected_suite = suite_hash(default_suite(workload, workload.seed), policy_id(baseline))
        verified = self.signer.verify(token, suite_hash=expected_suite)
        try:
            candidate = self.repository.get(verified.policy_id).spec
        except UnknownPolicy:
            raise InvalidToken(f"token names policy {verified.policy_id}, which is not in the repository",
                               {"policy_id": verified.policy_id}) from None

        config = config or self.config
        goal = goal or FAMILY_GOALS[workload.family]
        measure = measure or self._measure
        state = CanaryState(
            deployment_id=f"dep-{uuid.uuid4().hex[:12]}",
            policy_id=verified.policy_id,
            policy_name=candidate.name,
            baseline_id=policy_id(baseline),
            baseline_name=baseline.name,
            workload=workload.name,
            fingerprint=fingerprint or workload.fingerprint(),
            goal=goal,
            window_size=config.window_size,
            threshold_pct=config.threshold_pct,
            trip_limit=config.trip_limit,
            windows_planned=config.windows,
            active_policy_id=verified.policy_id,
            started_at=self.clock(),
        )
        with self._guard:
            self._states[state.deployment_id] = state
            lock = self._locks.setdefault(state.deployment_id, threading.Lock())
        logger.info("canary %s: %s vs baseline %s on %s", state.deployment_id, candidate.name, baseline.name, workload.name)

        with lock:
            for index in range(config.windows):
                window = window_workload(workload, index, config.window_size, config.work_jitter)
                before = measure(window, baseline, index, "baseline")
                after = measure(window, candidate, index, "candidate")
                self._observe(state, index, before, after)
                if state.closed():
                    break
            else:
                self._close(state, CanaryPhase.PROMOTED)
            if record_outcome:
                self.record(state)
        return state

    def _observe(self, state: CanaryState, index: int, before: MetricsReport, after: MetricsReport) -> None:
        delta = compute_delta(after, before)
        gain = goal_improvement_pct(state.goal, delta)
        tripped = gain < -state.threshold_pct
        state.consecutive_trips = state.consecutive_trips + 1 if tripped else 0
        state.windows.append(WindowRecord(index=index, baseline=before, candidate=after,
                                          delta=delta, improvement_pct=gain, tripped=tripped))
        logger.debug("canary %s window %d: %s %+.2f%% trips=%d",
                     state.deployment_id, index, state.goal, gain, state.consecutive_trips)
        if state.consecutive_trips >= state.trip_limit:
            self._close(state, CanaryPhase.REVERTED)

    def _close(self, state: CanaryState, phase: CanaryPhase) -> None:
        state.phase = phase
        state.active_policy_id = state.policy_id if phase == CanaryPhase.PROMOTED else state.baseline_id
        state.delta = compute_delta(
            mean_report(w.candidate for w in state.windows),
            mean_report(w.baseline for w in state.windows),
        )
        state.closed_at = self.clock()
        logger.info("canary %s %s after %d windows (%s %+.2f%%)", state.deployment_id, phase.value,
                    len(state.windows), state.goal, goal_improvement_pct(state.goal, state.delta))

    def record(self, state: CanaryState) -> None:
        """Write the closed deployment's outcome; a revert also notes an antipattern."""
        if not state.closed():
            raise WindowIncomplete(f"deployment {state.deployment_id} is still running")
        outcome = OutcomeRecord(
            fingerprint=state.fingerprint,
            goal=state.goal,
            delta=state.delta,
            timestamp=state.closed_at,
            deployment_id=state.deployment_id,
        )
        self.repository.record_outcome(state.policy_id, outcome)
        if state.phase == CanaryPhase.REVERTED:
            self.repository.add_antipattern(
                state.policy_id,
                f"reverted on {state.workload} ({state.fingerprint}): {state.goal} degraded beyond "
                f"{state.threshold_pct:g}% for {state.trip_limit} windows",
            )

    def get(self, deployment_id: str) -> CanaryState:
        try:
            return self._states[deployment_id]
        except KeyError:
            raise UnknownDeployment(f"unknown deployment {deployment_id}", {"deployment_id": deployment_id}) from None

    def feedback(self, deployment_id: str) -> PerformanceDelta:
        """Candidate vs baseline over the measured windows; frozen once closed."""
        state = self.get(deployment_id)
        if state.delta is not None:
            return state.delta
        if not state.windows:
            raise WindowIncomplete(f"deployment {deployment_id} has no measured window pair",
                                   {"deployment_id": deployment_id})
        return compute_delta(
            mean_report(w.candidate for w in state.windows),
            mean_report(w.baseline for w in state.windows),
        )

    def states(self) -> List[CanaryState]:
        return list(self._states.values())
