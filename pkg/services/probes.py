"""
Probe sources: where the analysis engine gets its numbers.

``ProbeSource`` is the contract; ``SimulatorProbeSource`` introspects a
WorkloadSpec and, for the run-queue probe, a baseline simulation. A real
system adapter would implement the same two methods.
"""

import logging
from abc import ABC, abstractmethod
from collections import Counter
from graphlib import TopologicalSorter
from typing import Any, Dict, FrozenSet, List, Tuple

from pydantic import BaseModel, ConfigDict

from scheduler.dsl.library import builtin
from scheduler.errors import UnsupportedProbe
from scheduler.metrics import nearest_rank
from scheduler.models import WorkloadSpec
from scheduler.sim.engine import simulate

logger = logging.getLogger(__name__)

SHIPPED_PROBES: FrozenSet[str] = frozenset({"durations", "dag", "wakeups", "runqueue"})
# Probe classes of a live system that no shipped source implements.
UNSHIPPED_PROBES: FrozenSet[str] = frozenset({"cache_misses", "perf_stat", "file_read", "app_build"})


class SourceCounters(BaseModel):
    """Cheap counters a tier-1 summary is derived from."""

    model_config = ConfigDict(frozen=True)

    task_count: int
    core_count: int
    dep_edges: int
    wake_edges: int
    durations: Tuple[int, ...]
    arrival_span: int
    total_work: int
    critical_path: int


class ProbeSource(ABC):
    name: str = "abstract"
    supported_probes: FrozenSet[str] = frozenset()

    @property
    @abstractmethod
    def workload(self) -> WorkloadSpec:
        ...

    @abstractmethod
    def counters(self) -> SourceCounters:
        ...

    @abstractmethod
    def probe(self, name: str, top_k: int = 5) -> Dict[str, Any]:
        ...

    def check_probes(self, probes) -> None:
        for name in sorted(probes):
            if name not in self.supported_probes:
                why = "not available on this source" if name in UNSHIPPED_PROBES else "unknown probe"
                raise UnsupportedProbe(
                    f"probe '{name}' {why}",
                    {"probe": name, "supported": sorted(self.supported_probes), "source": self.name},
                )


def _predecessors(workload: WorkloadSpec) -> Dict[str, List[str]]:
    preds: Dict[str, List[str]] = {t.id: list(t.deps) for t in workload.tasks}
    for t in workload.tasks:
        for target in t.wake_targets:
            preds[target].append(t.id)
    return preds


def _levels(workload: WorkloadSpec) -> Dict[str, int]:
    preds = _predecessors(workload)
    level: Dict[str, int] = {}
    for tid in TopologicalSorter(preds).static_order():
        level[tid] = 1 + max((level[p] for p in preds[tid]), default=0)
    return level


class SimulatorProbeSource(ProbeSource):
    """Introspection of a simulated workload."""

    name = "simulator"
    supported_probes = SHIPPED_PROBES

    def __init__(self, workload: WorkloadSpec, seed: int = 0):
        self._workload = workload
        self.seed = seed

    @property
    def workload(self) -> WorkloadSpec:
        return self._workload

    def counters(self) -> SourceCounters:
        w = self._workload
        preds = _predecessors(w)
        finish: Dict[str, int] = {}
        work = {t.id: t.total_work for t in w.tasks}
        for tid in TopologicalSorter(preds).static_order():
            finish[tid] = work[tid] + max((finish[p] for p in preds[tid]), default=0)
        arrivals = [t.arrival_time for t in w.tasks]
        return SourceCounters(
            task_count=len(w.tasks),
            core_count=w.core_count,
            dep_edges=sum(len(t.deps) for t in w.tasks),
            wake_edges=sum(len(t.wake_targets) for t in w.tasks),
            durations=tuple(t.total_work for t in w.tasks),
            arrival_span=max(arrivals) - min(arrivals),
            total_work=sum(work.values()),
            critical_path=max(finish.values()),
        )

    def probe(self, name: str, top_k: int = 5) -> Dict[str, Any]:
        self.check_probes({name})
        return getattr(self, f"_probe_{name}")(top_k)

    def _probe_durations(self, top_k: int) -> Dict[str, Any]:
        tasks = self._workload.tasks
        works = sorted(t.total_work for t in tasks)
        n = len(works)
        longest = sorted(tasks, key=lambda t: (-t.total_work, t.id))[:top_k]
        return {
            "count": n,
            "min": works[0],
            "p50": nearest_rank(works, 50),
            "p95": nearest_rank(works, 95),
            "max": works[-1],
            "mean": sum(works) / n,
            "top": [
                {"task_id": t.id, "total_work": t.total_work, "hint": t.expected_runtime_hint}
                for t in longest
            ],
        }

    def _probe_dag(self, top_k: int) -> Dict[str, Any]:
        w = self._workload
        levels = _levels(w)
        preds = _predecessors(w)
        has_succ = {p for ps in preds.values() for p in ps}
        width = Counter(levels.values())
        return {
            "depth": max(levels.values()),
            "width": max(width.values()),
            "edges": sum(len(ps) for ps in preds.values()),
            "roots": sum(1 for ps in preds.values() if not ps),
            "sinks": sum(1 for tid in preds if tid not in has_succ),
        }

    def _probe_wakeups(self, top_k: int) -> Dict[str, Any]:
        w = self._workload
        tasks = w.task_map()
        woken = {target for t in w.tasks for target in t.wake_targets}
        heads = [t for t in w.tasks if t.wake_targets and t.id not in woken]
        lengths = []
        for head in heads:
            length, node = 1, head
            while node.wake_targets:
                node = tasks[node.wake_targets[0]]
                length += 1
            lengths.append(length)
        return {
            "wake_edges": sum(len(t.wake_targets) for t in w.tasks),
            "chains": len(heads),
            "longest_chain": max(lengths, default=0),
            "mean_chain": sum(lengths) / len(lengths) if lengths else 0.0,
        }

    def _probe_runqueue(self, top_k: int) -> Dict[str, Any]:
        result = simulate(self._workload, builtin("fair_vruntime"), seed=self.seed)
        m = result.metrics
        return {
            "baseline": "fair_vruntime",
            "cpu_utilization": m.cpu_utilization if m else 0.0,
            "sched_delay_p99": m.sched_delay_p99 if m else 0,
            "max_wait": m.max_wait() if m else 0,
            "makespan": m.makespan if m else 0,
            "events": result.event_count,
        }
