"""
Deterministic discrete-event CPU-scheduler simulator.

Tasks arrive, wait on their dependencies, queue, run on cores and complete;
the policy under test decides which runnable task goes next and for how
long. Preemption happens only at event boundaries. Time is integer
microseconds; one run is single-threaded and bit-reproducible for a fixed
(workload, policy, seed).
"""

import heapq
import logging
import math
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from scheduler.dsl.expr import referenced_features
from scheduler.dsl.intervals import unsafe_divisions
from scheduler.dsl.policy import SLICE_MAX, SLICE_MIN, PolicySpec, policy_id
from scheduler.errors import EmptyTrace, InvalidSpec, RuntimeEvalError, SchedCPError
from scheduler.metrics import compute_metrics
from scheduler.models import NICE_0_WEIGHT, MetricsReport, TaskSpec, TaskTrace, WorkloadSpec

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    ARRIVAL = "Arrival"
    SLICE_EXPIRY = "SliceExpiry"
    COMPLETION = "Completion"
    WAKEUP = "Wakeup"


@dataclass(frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind
    task_id: str
    core: int = -1
    generation: int = 0

    def __lt__(self, other: "SimEvent") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class EventQueue:
    """Min-heap of events ordered by (time, sequence)."""

    def __init__(self):
        self._heap: List[SimEvent] = []
        self._seq = 0

    def push(self, time: int, kind: EventKind, task_id: str, core: int = -1, generation: int = 0) -> SimEvent:
        event = SimEvent(time, self._seq, kind, task_id, core, generation)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    time: int
    task_id: Optional[str] = None
    message: str = ""


class SimResult(BaseModel):
    """Outcome of one run. ``metrics`` is None only when nothing completed."""

    model_config = ConfigDict(frozen=True)

    workload: str
    family: str
    policy: str
    policy_id: str
    seed: int
    metrics: Optional[MetricsReport] = None
    trace: Tuple[TaskTrace, ...] = ()
    violations: Tuple[Violation, ...] = ()
    event_count: int = 0
    end_time: int = 0
    incomplete: bool = False

    def ok(self) -> bool:
        return not self.violations


@dataclass
class _Task:
    spec: TaskSpec
    blockers: Set[str]
    expected: Optional[float]
    arrived: bool = False
    release: Optional[int] = None
    first_run: Optional[int] = None
    completion: Optional[int] = None
    executed: int = 0
    vruntime: float = 0.0
    enqueue_time: int = 0
    wakeups: int = 0
    max_wait: int = 0
    core: int = -1
    run_start: int = 0
    queued_version: int = 0
    state: str = "pending"  # pending | runnable | running | done

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def weight(self) -> int:
        return self.spec.weight


def dispatch_key(priority: float, enqueue_time: int, task_id: str) -> Tuple[float, int, str]:
    """Run-queue order: higher priority first, then earlier enqueue, then id."""
    return (-priority, enqueue_time, task_id)


class _RunQueue:
    """
    Runnable tasks ordered by (priority desc, enqueue_time asc, id asc).

    When the priority ignores the time-varying features, keys are fixed at
    enqueue time and a heap with lazy deletion serves picks; otherwise every
    pick rescans the queue.
    """

    def __init__(self, key: Callable[[_Task], Tuple[float, int, str]], static: bool):
        self._key = key
        self._static = static
        self._heap: List[Tuple[Tuple[float, int, str], int, str]] = []
        self._tasks: Dict[str, _Task] = {}

    def __len__(self) -> int:
        return len(self._tasks)

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._tasks

    def tasks(self) -> List[_Task]:
        return list(self._tasks.values())

    def push(self, task: _Task) -> None:
        task.queued_version += 1
        self._tasks[task.id] = task
        if self._static:
            heapq.heappush(self._heap, (self._key(task), task.queued_version, task.id))

    def remove(self, task: _Task) -> None:
        del self._tasks[task.id]

    def _clean(self) -> None:
        while self._heap:
            _, version, task_id = self._heap[0]
            task = self._tasks.get(task_id)
            if task is not None and task.queued_version == version:
                return
            heapq.heappop(self._heap)

    def best(self) -> Optional[_Task]:
        if not self._tasks:
            return None
        if self._static:
            self._clean()
            return self._tasks[self._heap[0][2]]
        return min(self._tasks.values(), key=self._key)

    def pop_best(self) -> Optional[_Task]:
        task = self.best()
        if task is not None:
            self.remove(task)
        return task


_TIME_VARYING = {"wait_time", "now"}


class Simulator:
    """
    One simulation run.

    Args:
        workload: the tasks and machine.
        policy: the scheduling policy under test.
        seed: drives hint noise only.
        hint_noise: sigma of multiplicative log-normal noise on hints.
        horizon: stop time in microseconds (the workload's own horizon
            applies when smaller).
        dry_run: accept a policy that has not been structurally verified.
    """

    def __init__(
        self,
        workload: WorkloadSpec,
        policy: PolicySpec,
        seed: int = 0,
        hint_noise: float = 0.0,
        horizon: Optional[int] = None,
        dry_run: bool = False,
    ):
        if not dry_run:
            for expr in policy.expressions():
                if unsafe_divisions(expr, policy.params):
                    raise InvalidSpec(
                        f"policy '{policy.name}' may divide by zero; verify it or simulate with dry_run",
                        {"policy": policy.name},
                    )
        self.workload = workload
        self.policy = policy
        self.seed = seed
        self.dry_run = dry_run
        limits = [h for h in (workload.horizon, horizon) if h is not None]
        self.horizon = min(limits) if limits else None

        self._priority = policy.priority_fn()
        self._slice = policy.slice_fn()
        self._cores: List[Optional[_Task]] = [None] * workload.core_count
        self._generation = [0] * workload.core_count
        self._events = EventQueue()
        self._violations: List[Violation] = []
        self._event_count = 0
        self.now = 0

        rng = np.random.default_rng(seed) if hint_noise > 0 else None
        wakers: Dict[str, Set[str]] = {t.id: set() for t in workload.tasks}
        self._dependents: Dict[str, List[str]] = {t.id: [] for t in workload.tasks}
        for t in workload.tasks:
            for target in t.wake_targets:
                wakers[target].add(t.id)
                self._dependents[t.id].append(target)
        for t in sorted(workload.tasks, key=lambda t: t.id):
            for dep in t.deps:
                if t.id not in self._dependents[dep]:
                    self._dependents[dep].append(t.id)

        self._tasks: Dict[str, _Task] = {}
        for t in workload.tasks:
            expected: Optional[float] = None
            if t.expected_runtime_hint is not None:
                expected = float(t.expected_runtime_hint)
                if rng is not None:
                    expected *= float(math.exp(rng.normal(0.0, hint_noise)))
            self._tasks[t.id] = _Task(spec=t, blockers=set(t.deps) | wakers[t.id], expected=expected)

        static = not (referenced_features(policy.priority_expr) & _TIME_VARYING)
        self._queue = _RunQueue(self._queue_key, static)
        self._newcomers: List[_Task] = []

    # Features and ordering ---------------------------------------------

    def _live_exec(self, task: _Task) -> int:
        if task.state == "running":
            return task.executed + (self.now - task.run_start)
        return task.executed

    def _live_vruntime(self, task: _Task) -> float:
        if task.state == "running":
            return task.vruntime + (self.now - task.run_start) * NICE_0_WEIGHT / task.weight
        return task.vruntime

    def features(self, task: _Task) -> Dict[str, float]:
        executed = self._live_exec(task)
        waiting = task.state == "runnable"
        return {
            "arrival_time": float(task.spec.arrival_time),
            "enqueue_time": float(task.enqueue_time),
            "wait_time": float(self.now - task.enqueue_time) if waiting else 0.0,
            "exec_runtime": float(executed),
            "vruntime": self._live_vruntime(task),
            "expected_runtime": task.expected if task.expected is not None else float(executed),
            "weight": float(task.weight),
            "wakeup_count": float(task.wakeups),
            "now": float(self.now),
        }

    def _eval(self, fn, task: _Task) -> float:
        try:
            value = fn(self.features(task))
        except SchedCPError as exc:
            raise RuntimeEvalError(
                f"policy '{self.policy.name}' failed on task {task.id}: {exc.message}",
                {"task": task.id, "time": self.now, "cause": exc.kind},
            ) from exc
        except (OverflowError, ArithmeticError) as exc:
            raise RuntimeEvalError(f"policy '{self.policy.name}' failed on task {task.id}: {exc}") from exc
        if math.isnan(value):
            raise RuntimeEvalError(f"policy '{self.policy.name}' produced NaN for task {task.id}")
        return value

    def priority(self, task: _Task) -> float:
        return self._eval(self._priority, task)

    def _queue_key(self, task: _Task) -> Tuple[float, int, str]:
        return dispatch_key(self.priority(task), task.enqueue_time, task.id)

    def _slice_length(self, task: _Task) -> int:
        raw = self._eval(self._slice, task)
        return int(round(min(max(raw, SLICE_MIN), SLICE_MAX)))

    # State transitions ---------------------------------------------------

    def _violation(self, code: str, message: str, task_id: Optional[str] = None) -> None:
        logger.debug("violation %s at %d: %s", code, self.now, message)
        self._violations.append(Violation(code=code, time=self.now, task_id=task_id, message=message))

    def _account(self, task: _Task) -> None:
        delta = self.now - task.run_start
        task.executed += delta
        task.vruntime += delta * NICE_0_WEIGHT / task.weight
        task.run_start = self.now

    def _enqueue(self, task: _Task) -> None:
        task.state = "runnable"
        task.enqueue_time = self.now
        self._queue.push(task)

    def _release(self, task: _Task) -> None:
        if task.release is not None:
            return
        floor = [self._live_vruntime(t) for t in self._queue.tasks()]
        floor += [self._live_vruntime(t) for t in self._cores if t is not None]
        if floor:
            task.vruntime = max(task.vruntime, min(floor))
        task.release = self.now
        task.wakeups += 1
        self._enqueue(task)
        self._newcomers.append(task)

    def _stop(self, core: int, preempt: bool = False) -> _Task:
        task = self._cores[core]
        if preempt and not self.policy.preemptive:
            self._violation("NON_PREEMPTION", f"{task.id} preempted under a run-to-completion policy", task.id)
        self._account(task)
        self._cores[core] = None
        self._generation[core] += 1
        task.core = -1
        return task

    def _dispatch(self, task: _Task, core: int) -> None:
        missing = [d for d in task.spec.deps if self._tasks[d].state != "done"]
        if missing:
            self._violation("DEPENDENCY", f"{task.id} dispatched before {missing}", task.id)
        if task.first_run is None:
            task.first_run = self.now
        task.max_wait = max(task.max_wait, self.now - task.enqueue_time)
        task.state = "running"
        task.core = core
        task.run_start = self.now
        self._cores[core] = task
        self._generation[core] += 1
        remaining = task.spec.total_work - task.executed
        if self._slice is not None:
            length = self._slice_length(task)
            if length < remaining:
                self._events.push(self.now + length, EventKind.SLICE_EXPIRY, task.id, core, self._generation[core])
                return
        self._events.push(self.now + remaining, EventKind.COMPLETION, task.id, core, self._generation[core])

    def _finish(self, task: _Task) -> None:
        """Mark a task complete and wake whatever waited on it."""
        task.state = "done"
        task.completion = self.now
        for dependent in self._dependents[task.id]:
            other = self._tasks[dependent]
            other.blockers.discard(task.id)
            if not other.blockers and other.arrived:
                self._events.push(self.now, EventKind.WAKEUP, dependent)

    # Event handlers -------------------------------------------------------

    def _handle(self, event: SimEvent) -> None:
        task = self._tasks[event.task_id]
        if event.kind == EventKind.ARRIVAL:
            task.arrived = True
            if not task.blockers:
                self._release(task)
        elif event.kind == EventKind.WAKEUP:
            self._release(task)
        elif event.kind == EventKind.COMPLETION:
            self._stop(event.core)
            if task.executed != task.spec.total_work:
                self._violation("WORK_MISMATCH", f"{task.id} ran {task.executed} of {task.spec.total_work}", task.id)
            self._finish(task)
        elif event.kind == EventKind.SLICE_EXPIRY:
            self._stop(event.core)
            self._enqueue(task)

    def _stale(self, event: SimEvent) -> bool:
        if event.kind not in (EventKind.COMPLETION, EventKind.SLICE_EXPIRY):
            return False
        return self._generation[event.core] != event.generation

    def _running_key(self, task: _Task) -> Tuple[float, int, str]:
        return (-self.priority(task), task.enqueue_time, task.id)

    def _schedule(self) -> None:
        """Fill idle cores, then let newcomers preempt weaker running tasks."""
        for core in range(len(self._cores)):
            if self._cores[core] is None:
                task = self._queue.pop_best()
                if task is None:
                    break
                self._dispatch(task, core)

        newcomers, self._newcomers = self._newcomers, []
        if self._slice is None or not len(self._queue):
            return
        waiting = sorted((t for t in newcomers if t.id in self._queue), key=self._queue_key)
        for task in waiting:
            running = [(self._running_key(t), t.core) for t in self._cores if t is not None]
            if not running:
                break
            weakest_key, core = max(running)
            if -self._queue_key(task)[0] <= -weakest_key[0]:
                continue
            self._queue.remove(task)
            preempted = self._stop(core, preempt=True)
            self._enqueue(preempted)
            self._dispatch(task, core)

    def _check_conservation(self) -> None:
        if len(self._queue) and any(c is None for c in self._cores):
            self._violation("WORK_CONSERVATION", f"{len(self._queue)} runnable tasks with an idle core")

    # Driver ---------------------------------------------------------------

    def run(self) -> SimResult:
        for t in sorted(self.workload.tasks, key=lambda t: (t.arrival_time, t.id)):
            self._events.push(t.arrival_time, EventKind.ARRIVAL, t.id)

        stopped_at_horizon = False
        while len(self._events):
            t = self._events.peek_time()
            if self.horizon is not None and t > self.horizon:
                stopped_at_horizon = True
                break
            if t < self.now:
                self._violation("CLOCK", f"event at {t} after clock reached {self.now}")
            self.now = max(self.now, t)
            while len(self._events) and self._events.peek_time() == t:
                event = self._events.pop()
                if self._stale(event):
                    continue
                self._event_count += 1
                self._handle(event)
            self._schedule()
            self._check_conservation()

        if stopped_at_horizon:
            self.now = self.horizon
            for core, task in enumerate(self._cores):
                if task is not None:
                    self._account(task)
        for task in self._queue.tasks():
            task.max_wait = max(task.max_wait, self.now - task.enqueue_time)

        pending = [t for t in self._tasks.values() if t.state != "done"]
        if pending and not stopped_at_horizon:
            for task in pending:
                self._violation("TASK_LOST", f"{task.id} neither completed nor queued", task.id)
        elif stopped_at_horizon:
            tracked = {t.id for t in self._queue.tasks()} | {t.id for t in self._cores if t is not None}
            for task in pending:
                if task.arrived and not task.blockers and task.id not in tracked:
                    self._violation("TASK_LOST", f"{task.id} released but not tracked at horizon", task.id)

        return self._result(incomplete=bool(pending))

    def _result(self, incomplete: bool) -> SimResult:
        trace = tuple(
            TaskTrace(
                task_id=t.id,
                job=t.spec.job,
                weight=t.weight,
                arrival=t.spec.arrival_time,
                release=t.release,
                first_run=t.first_run,
                completion=t.completion,
                exec_runtime=t.executed,
                max_wait=t.max_wait,
            )
            for t in (self._tasks[s.id] for s in self.workload.tasks)
            if t.arrived or t.completion is not None
        )
        metrics = None
        if trace:
            start = min(t.arrival for t in trace)
            try:
                metrics = compute_metrics(trace, self.workload.core_count, self.now - start)
            except EmptyTrace:
                metrics = None
        result = SimResult(
            workload=self.workload.name,
            family=self.workload.family,
            policy=self.policy.name,
            policy_id=policy_id(self.policy),
            seed=self.seed,
            metrics=metrics,
            trace=trace,
            violations=tuple(self._violations),
            event_count=self._event_count,
            end_time=self.now,
            incomplete=incomplete,
        )
        logger.debug(
            "simulated %s under %s: %d events, end %d us, %d violations",
            self.workload.name, self.policy.name, self._event_count, self.now, len(self._violations),
        )
        return result


def simulate(
    workload: WorkloadSpec,
    policy: PolicySpec,
    seed: int = 0,
    hint_noise: float = 0.0,
    horizon: Optional[int] = None,
    dry_run: bool = False,
) -> SimResult:
    """Run ``policy`` on ``workload``; see Simulator for the arguments."""
    return Simulator(workload, policy, seed, hint_noise, horizon, dry_run).run()


def completions(result: SimResult) -> Mapping[str, Optional[int]]:
    return {t.task_id: t.completion for t in result.trace}


class SimulationCache:
    """
    Memoized ``simulate`` keyed by (workload fingerprint, policy id, seed).

    Runs are deterministic, so a cached result is the result. Thread-safe;
    evicts oldest entries past ``max_entries``.
    """

    def __init__(self, max_entries: int = 256, simulate_fn: Callable[..., SimResult] = simulate):
        self.max_entries = max_entries
        self.simulate_fn = simulate_fn
        self._entries: Dict[Tuple[str, str, int], SimResult] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def run(self, workload: WorkloadSpec, policy: PolicySpec, seed: Optional[int] = None) -> SimResult:
        seed = workload.seed if seed is None else seed
        key = (workload.fingerprint(), policy_id(policy), seed)
        with self._lock:
            cached = self._entries.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        result = self.simulate_fn(workload, policy, seed=seed)
        with self._lock:
            self.misses += 1
            self._entries[key] = result
            while len(self._entries) > self.max_entries:
                self._entries.pop(next(iter(self._entries)))
        return result
