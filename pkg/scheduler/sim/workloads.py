"""
Workload generators for the three families plus the batch presets and the
named suites used by the cli bench.
"""

import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from scheduler.errors import InvalidDistribution, InvalidWorkload, UnknownSuite
from scheduler.models import USEC_PER_SEC, TaskSpec, WorkloadSpec

MIN_WORK = 100


class LogNormal(BaseModel):
    """Log-normal duration distribution given by its median (µs) and sigma."""

    model_config = ConfigDict(frozen=True)

    median: float = 20_000.0
    sigma: float = 0.5

    def sample(self, rng: np.random.Generator, size: int, scale: float = 1.0) -> List[int]:
        if size <= 0:
            return []
        values = rng.lognormal(mean=math.log(self.median * scale), sigma=self.sigma, size=size)
        return [max(MIN_WORK, int(round(v))) for v in values]


DurationDist = Union[LogNormal, Tuple[float, float], Dict[str, float]]


def _dist(dur_dist: Optional[DurationDist]) -> LogNormal:
    if dur_dist is None:
        return LogNormal()
    try:
        if isinstance(dur_dist, LogNormal):
            dist = dur_dist
        elif isinstance(dur_dist, dict):
            dist = LogNormal(**dur_dist)
        else:
            median, sigma = dur_dist
            dist = LogNormal(median=median, sigma=sigma)
    except (TypeError, ValueError, ValidationError) as exc:
        raise InvalidDistribution(f"cannot read duration distribution {dur_dist!r}: {exc}") from None
    if not (math.isfinite(dist.median) and dist.median > 0):
        raise InvalidDistribution(f"median must be positive, got {dist.median}")
    if not (math.isfinite(dist.sigma) and dist.sigma >= 0):
        raise InvalidDistribution(f"sigma must be non-negative, got {dist.sigma}")
    return dist


def gen_build_dag(
    n_tasks: int,
    fan_in: int,
    dur_dist: Optional[DurationDist] = None,
    seed: int = 0,
    core_count: int = 8,
) -> WorkloadSpec:
    """
    A parallel build: a wide compile layer, an archive layer where each
    archive collects ``fan_in`` objects, and one final link step.

    ``meta["layers"]`` is the longest dependency chain in tasks.
    """
    if n_tasks < 1:
        raise InvalidWorkload(f"n_tasks must be >= 1, got {n_tasks}")
    if fan_in < 0:
        raise InvalidWorkload(f"fan_in must be >= 0, got {fan_in}")
    dist = _dist(dur_dist)
    rng = np.random.default_rng(seed)

    if n_tasks == 1:
        work = dist.sample(rng, 1, 3.0)[0]
        return WorkloadSpec(
            name=f"build-dag-1-s{seed}", family="build-dag",
            tasks=(TaskSpec(id="link", arrival_time=0, total_work=work, expected_runtime_hint=work),),
            core_count=core_count, seed=seed, meta={"layers": 1, "fan_in": fan_in},
        )

    rest = n_tasks - 1
    n_archives = rest // 8 if fan_in > 0 and rest >= 2 else 0
    n_compile = rest - n_archives

    compile_ids = [f"cc-{i:04d}" for i in range(n_compile)]
    archive_ids = [f"ar-{i:03d}" for i in range(n_archives)]
    compile_work = dist.sample(rng, n_compile)
    archive_work = dist.sample(rng, n_archives, 0.25)
    link_work = dist.sample(rng, 1, 3.0)[0]

    tasks: List[TaskSpec] = []
    for cid, work in zip(compile_ids, compile_work):
        tasks.append(TaskSpec(id=cid, arrival_time=0, total_work=work, expected_runtime_hint=work))

    for i, (aid, work) in enumerate(zip(archive_ids, archive_work)):
        # every object lands in some archive; extra inputs drawn at random
        own = [compile_ids[j] for j in range(i, n_compile, n_archives)]
        extra_pool = [c for c in compile_ids if c not in own]
        n_extra = max(0, min(fan_in - len(own), len(extra_pool)))
        extra = list(rng.choice(extra_pool, size=n_extra, replace=False)) if n_extra else []
        deps = tuple(sorted(set(own) | {str(e) for e in extra}))
        tasks.append(TaskSpec(id=aid, arrival_time=0, total_work=work, expected_runtime_hint=work, deps=deps))

    if fan_in == 0:
        link_deps: Tuple[str, ...] = ()
        layers = 1
    elif n_archives:
        link_deps = tuple(archive_ids)
        layers = 3
    else:
        link_deps = tuple(compile_ids)
        layers = 2
    tasks.append(TaskSpec(id="link", arrival_time=0, total_work=link_work,
                          expected_runtime_hint=link_work, deps=link_deps))

    return WorkloadSpec(
        name=f"build-dag-{n_tasks}-s{seed}",
        family="build-dag",
        tasks=tuple(tasks),
        core_count=core_count,
        seed=seed,
        meta={"layers": layers, "fan_in": fan_in},
    )


def gen_latency_chain(
    n_workers: int,
    wake_period: int = 10_000,
    work_per_wake: int = 1_000,
    seed: int = 0,
    n_wakes: int = 20,
    core_count: int = 2,
    n_hogs: int = 0,
    hog_work: int = 200_000,
) -> WorkloadSpec:
    """
    Periodic request handlers: each worker is a chain of ``n_wakes`` short
    tasks, each woken by its predecessor and due once per ``wake_period``
    (with seeded jitter). Optional CPU hogs provide background load.
    """
    if n_workers < 1 or n_wakes < 1:
        raise InvalidWorkload("latency chain needs at least one worker and one wake")
    if wake_period <= 0 or work_per_wake <= 0 or hog_work <= 0 or n_hogs < 0:
        raise InvalidDistribution("wake period, work and hog work must be positive")
    rng = np.random.default_rng(seed)
    jitter_span = max(1, wake_period // 10)

    tasks: List[TaskSpec] = []
    for h in range(n_hogs):
        tasks.append(TaskSpec(id=f"hog-{h:02d}", arrival_time=0, total_work=hog_work,
                              expected_runtime_hint=hog_work, job=f"hog-{h:02d}"))
    for w in range(n_workers):
        jitter = rng.integers(0, jitter_span, size=n_wakes)
        for k in range(n_wakes):
            tid = f"w{w:02d}-{k:03d}"
            nxt = (f"w{w:02d}-{k + 1:03d}",) if k + 1 < n_wakes else ()
            tasks.append(TaskSpec(
                id=tid,
                arrival_time=k * wake_period + int(jitter[k]),
                total_work=work_per_wake,
                expected_runtime_hint=work_per_wake,
                wake_targets=nxt,
            ))

    return WorkloadSpec(
        name=f"latency-chain-{n_workers}w-{n_hogs}h-s{seed}",
        family="latency-chain",
        tasks=tuple(tasks),
        core_count=core_count,
        seed=seed,
        meta={"workers": n_workers, "wakes": n_wakes, "hogs": n_hogs},
    )


def gen_longtail_batch(
    n_short: int,
    short_work: int,
    n_long: int,
    long_work: int,
    core_count: int = 8,
    seed: int = 0,
    name: Optional[str] = None,
) -> WorkloadSpec:
    """
    A batch of tasks arriving together: shorts first, long ones last (so
    arrival/id order is the FIFO-long-last order). Hints are truthful and
    the whole batch is one job.
    """
    if n_short < 0 or n_long < 0 or n_short + n_long < 1:
        raise InvalidWorkload("batch needs at least one task")
    if (n_short and short_work <= 0) or (n_long and long_work <= 0):
        raise InvalidWorkload("task work must be positive")
    works = [short_work] * n_short + [long_work] * n_long
    tasks = tuple(
        TaskSpec(id=f"task-{i:03d}", arrival_time=0, total_work=w, expected_runtime_hint=w, job="batch")
        for i, w in enumerate(works)
    )
    return WorkloadSpec(
        name=name or f"longtail-{n_short}x{short_work}-{n_long}x{long_work}",
        family="batch-longtail",
        tasks=tasks,
        core_count=core_count,
        seed=seed,
        meta={"short": n_short, "long": n_long},
    )


def straggler_longtail(seed: int = 0) -> WorkloadSpec:
    """39 one-second tasks and one 30-second task on 8 cores."""
    return gen_longtail_batch(39, 1 * USEC_PER_SEC, 1, 30 * USEC_PER_SEC, core_count=8, seed=seed)


# (short seconds, long seconds) per batch shape
_BATCH_SHAPES: Dict[str, Tuple[float, float]] = {
    "file-compression": (1.0, 30.0),
    "video-transcode": (2.0, 45.0),
    "unit-tests": (0.5, 20.0),
    "log-analytics": (1.5, 40.0),
    "external-sort": (1.0, 25.0),
    "data-compaction": (0.8, 24.0),
    "search-indexing": (1.2, 36.0),
    "checksum-scan": (0.6, 18.0),
}


def batch_workload_presets(seed: int = 0) -> List[WorkloadSpec]:
    """Eight batch shapes, each 39 short tasks plus one long straggler."""
    return [
        gen_longtail_batch(
            39, int(short * USEC_PER_SEC), 1, int(long * USEC_PER_SEC),
            core_count=8, seed=seed, name=f"batch-{label}",
        )
        for label, (short, long) in _BATCH_SHAPES.items()
    ]


def smoke_build_dag(seed: int = 0) -> WorkloadSpec:
    return gen_build_dag(24, 3, LogNormal(median=5_000, sigma=0.4), seed=seed, core_count=4)


def smoke_latency_chain(seed: int = 0) -> WorkloadSpec:
    return gen_latency_chain(4, 10_000, 1_000, seed=seed, n_wakes=20, core_count=2, n_hogs=2, hog_work=200_000)


SUITES: Dict[str, Callable[[int], List[WorkloadSpec]]] = {
    "longtail": lambda seed: [straggler_longtail(seed)],
    "build": lambda seed: [gen_build_dag(100, 4, seed=seed)],
    "latency": lambda seed: [gen_latency_chain(8, seed=seed, n_hogs=2)],
    "batch": batch_workload_presets,
    "smoke": lambda seed: [smoke_build_dag(seed), smoke_latency_chain(seed)],
}


def suite(name: str, seed: int = 0) -> List[WorkloadSpec]:
    if name not in SUITES:
        raise UnknownSuite(f"unknown suite '{name}'", {"known": sorted(SUITES)})
    return SUITES[name](seed)


def load_workload(path: Union[str, Path]) -> WorkloadSpec:
    """Read a workload from its canonical JSON file."""
    return WorkloadSpec.from_json(Path(path).read_text(encoding="utf-8"))
