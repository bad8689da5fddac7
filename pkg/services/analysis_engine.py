"""
Workload Analysis Engine.

Tier 1 (``summarize``) renders a byte-capped summary from cheap counters;
tier 2 (``profile_deep``) runs named probes at a higher cost per probe.
``classify`` maps what was seen to a WorkloadProfile and ``report_feedback``
is the post-deployment channel.
"""

import logging
import math
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from scheduler.canonical import content_hash
from scheduler.errors import BudgetTooSmall, UnboundSession
from scheduler.models import FAMILY_GOALS, Goal, PerformanceDelta
from services.probes import SourceCounters
from services.sessions import COST_PROBE, COST_SUMMARY, Session

logger = logging.getLogger(__name__)

MIN_BUDGET = 128
HISTOGRAM_BUCKETS = 8
# Lines are dropped from the end of this order first.
SALIENCE = ("family", "counts", "histogram", "parallelism", "load")


class WorkloadSummary(BaseModel):
    """Tier-1 summary; ``text`` never exceeds ``budget_bytes`` UTF-8 bytes."""

    model_config = ConfigDict(frozen=True)

    family_guess: str
    task_count: int
    core_count: int
    dep_edges: int
    wake_edges: int
    arrival_span: int
    parallelism: float
    histogram: Tuple[int, ...]
    histogram_range: Tuple[int, int]
    shape: str
    load: float
    budget_bytes: int
    sections: Tuple[str, ...]
    text: str


class ProfileReport(BaseModel):
    """Tier-2 report holding exactly the requested probe sections."""

    model_config = ConfigDict(frozen=True)

    probes: Tuple[str, ...]
    sections: Dict[str, Dict[str, Any]]


class WorkloadProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: str
    description: str
    optimization_goal: Goal
    confidence: float = Field(ge=0, le=1)
    fingerprint: str


def log_histogram(durations: Iterable[int], buckets: int = HISTOGRAM_BUCKETS) -> Tuple[Tuple[int, ...], Tuple[int, int]]:
    """Counts over ``buckets`` log-spaced buckets spanning [min, max]."""
    values = list(durations)
    lo, hi = min(values), max(values)
    counts = [0] * buckets
    if lo == hi:
        counts[0] = len(values)
        return tuple(counts), (lo, hi)
    span = math.log(hi / lo)
    for v in values:
        idx = int(buckets * math.log(v / lo) / span)
        counts[min(buckets - 1, idx)] += 1
    return tuple(counts), (lo, hi)


def histogram_shape(counts: Tuple[int, ...]) -> str:
    occupied = [i for i, c in enumerate(counts) if c]
    if len(occupied) == 1:
        return "unimodal"
    if len(occupied) == 2 and occupied[1] - occupied[0] > 1:
        return "bimodal"
    return "spread"


def guess_family(counters: SourceCounters, shape: str) -> str:
    if counters.dep_edges:
        return "build-dag"
    if counters.wake_edges:
        return "latency-chain"
    if counters.arrival_span == 0 and shape == "bimodal":
        return "batch-longtail"
    return "custom"


def _fit(lines: List[Tuple[str, str]], budget: int) -> Tuple[Tuple[str, ...], str]:
    kept = list(lines)
    while kept:
        text = "".join(line for _, line in kept)
        if len(text.encode("utf-8")) <= budget:
            return tuple(name for name, _ in kept), text
        kept.pop()
    return (), ""


class AnalysisEngine:
    """
    Tiered observation endpoints over a session's probe source.

    Args:
        registry: deployment registry read by ``report_feedback``.
        provider: optional classifier override ``(summary, report) -> dict``
            returning any of ``family``, ``description``, ``confidence``.
    """

    def __init__(self, registry=None, provider: Optional[Callable] = None):
        self.registry = registry
        self.provider = provider

    def _source(self, session: Session):
        if session.source is None:
            raise UnboundSession(f"session {session.id} has no workload source", {"session_id": session.id})
        return session.source

    def summarize(self, session: Session, budget_bytes: Optional[int] = None) -> WorkloadSummary:
        budget = session.context_budget if budget_bytes is None else budget_bytes
        if budget < MIN_BUDGET:
            raise BudgetTooSmall(f"summary budget must be >= {MIN_BUDGET} bytes, got {budget}",
                                 {"budget": budget, "minimum": MIN_BUDGET})
        source = self._source(session)
        session.charge("summarize", COST_SUMMARY)

        counters = source.counters()
        counts, (lo, hi) = log_histogram(counters.durations)
        shape = histogram_shape(counts)
        family = guess_family(counters, shape)
        parallelism = counters.total_work / max(1, counters.critical_path)
        load = parallelism / counters.core_count

        lines = [
            ("family", f"family: {family}\n"),
            ("counts", f"tasks: {counters.task_count} cores: {counters.core_count} "
                       f"deps: {counters.dep_edges} wakes: {counters.wake_edges}\n"),
            ("histogram", f"duration histogram, {HISTOGRAM_BUCKETS} log buckets from {lo}us to {hi}us: "
                          f"{' '.join(str(c) for c in counts)} shape={shape}\n"),
            ("parallelism", f"parallelism estimate: {parallelism:.2f} (work / critical path)\n"),
            ("load", f"load: {load:.2f} per core, arrivals over {counters.arrival_span}us\n"),
        ]
        sections, text = _fit(lines, budget)
        logger.debug("summary for session %s: %d bytes, sections %s", session.id, len(text), sections)
        return WorkloadSummary(
            family_guess=family,
            task_count=counters.task_count,
            core_count=counters.core_count,
            dep_edges=counters.dep_edges,
            wake_edges=counters.wake_edges,
            arrival_span=counters.arrival_span,
            parallelism=parallelism,
            histogram=counts,
            histogram_range=(lo, hi),
            shape=shape,
            load=load,
            budget_bytes=budget,
            sections=sections,
            text=text,
        )

    def profile_deep(self, session: Session, probes: Iterable[str], top_k: int = 5) -> ProfileReport:
        """Run each requested probe; costs COST_PROBE per probe."""
        source = self._source(session)
        wanted = tuple(sorted(set(probes)))
        source.check_probes(wanted)
        session.charge("profile_deep", COST_PROBE * len(wanted))
        sections = {name: source.probe(name, top_k) for name in wanted}
        return ProfileReport(probes=wanted, sections=sections)

    def classify(self, summary: WorkloadSummary, report: Optional[ProfileReport] = None) -> WorkloadProfile:
        """
        Rule-based profile. Confidence is 0.9 for dependency or wake
        structure, 0.85 for a bimodal batch and at most 0.5 for custom; a
        confirming tier-2 report adds 0.1.
        """
        family = summary.family_guess
        confidence = {"build-dag": 0.9, "latency-chain": 0.9, "batch-longtail": 0.85}.get(family, 0.4)
        if report is not None and family != "custom":
            sections = report.sections
            confirmed = (
                (family == "build-dag" and sections.get("dag", {}).get("depth", 0) >= 2)
                or (family == "latency-chain" and sections.get("wakeups", {}).get("chains", 0) >= 1)
                or (family == "batch-longtail" and "durations" in sections)
            )
            if confirmed:
                confidence = min(1.0, confidence + 0.1)

        description = (
            f"{family} workload: {summary.task_count} tasks on {summary.core_count} cores, "
            f"{summary.dep_edges} dependency edges, {summary.wake_edges} wake edges, "
            f"{summary.shape} durations, parallelism {summary.parallelism:.2f}"
        )
        if self.provider is not None:
            override = self.provider(summary, report) or {}
            family = override.get("family", family)
            if family not in FAMILY_GOALS:
                logger.warning("classifier override named unknown family %r; using custom", family)
                family = "custom"
            description = override.get("description", description)
            confidence = override.get("confidence", confidence)
        if family == "custom":
            confidence = min(confidence, 0.5)

        return WorkloadProfile(
            family=family,
            description=description,
            optimization_goal=FAMILY_GOALS[family],
            confidence=round(confidence, 6),
            fingerprint=summary_fingerprint(summary),
        )

    def report_feedback(self, deployment_id: str) -> PerformanceDelta:
        return self.registry.feedback(deployment_id)


def summary_fingerprint(summary: WorkloadSummary) -> str:
    """Hash of the structural summary features; metric noise cannot move it."""
    return content_hash({
        "family": summary.family_guess,
        "tasks": summary.task_count,
        "cores": summary.core_count,
        "deps": summary.dep_edges,
        "wakes": summary.wake_edges,
        "histogram": list(summary.histogram),
    })
