import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scheduler.dsl.library import BUILTIN_NAMES, builtin
from scheduler.dsl.parser import parse_policy
from scheduler.errors import InvalidSpec, RuntimeEvalError
from scheduler.models import USEC_PER_SEC, TaskSpec, WorkloadSpec
from scheduler.sim.engine import SimulationCache, completions, simulate
from scheduler.sim.export import TRACE_COLUMNS, trace_frame, trace_to_csv
from scheduler.sim.workloads import gen_build_dag, gen_latency_chain, smoke_latency_chain


def test_fifo_runs_in_arrival_order(two_tasks):
    result = simulate(two_tasks, builtin("fifo"))
    assert completions(result) == {"a": 2 * USEC_PER_SEC, "b": 5 * USEC_PER_SEC}
    assert result.ok()


def test_longtail_fifo_vs_ljf(longtail):
    fifo = simulate(longtail, builtin("fifo"))
    ljf = simulate(longtail, builtin("ljf"))

    # the straggler starts after four rounds of shorts under FIFO
    assert fifo.metrics.makespan == 34 * USEC_PER_SEC
    assert ljf.metrics.makespan == 30 * USEC_PER_SEC
    assert ljf.metrics.makespan < fifo.metrics.makespan
    # one job: average completion is the batch completion
    assert ljf.metrics.avg_completion == pytest.approx(30 * USEC_PER_SEC)


def test_runs_are_deterministic(longtail):
    fair = builtin("fair_vruntime")
    assert simulate(longtail, fair) == simulate(longtail, fair)
    noisy = [simulate(longtail, builtin("ljf"), seed=7, hint_noise=0.5) for _ in range(2)]
    assert noisy[0] == noisy[1]


def test_horizon_leaves_work_incomplete(longtail):
    result = simulate(longtail, builtin("fifo"), horizon=10 * USEC_PER_SEC)

    assert result.incomplete
    assert result.end_time == 10 * USEC_PER_SEC
    assert result.metrics.completed == 39
    assert result.metrics.incomplete
    assert result.violations == ()


def test_dependencies_are_respected():
    workload = gen_build_dag(60, 4, seed=3)
    result = simulate(workload, builtin("ljf"))
    done = completions(result)

    assert result.ok()
    assert all(done.values())
    for task in workload.tasks:
        trace = next(t for t in result.trace if t.task_id == task.id)
        for dep in task.deps:
            assert trace.first_run >= done[dep]
    assert done["link"] == max(done.values())


def test_wakeups_follow_their_waker():
    workload = gen_latency_chain(2, n_wakes=5, seed=1)
    result = simulate(workload, builtin("fair_vruntime"))
    traces = {t.task_id: t for t in result.trace}

    assert result.ok()
    for w in range(2):
        for k in range(1, 5):
            assert traces[f"w{w:02d}-{k:03d}"].release >= traces[f"w{w:02d}-{k - 1:03d}"].completion


def test_weight_classes():
    workload = WorkloadSpec(
        name="weights",
        tasks=(
            TaskSpec(id="light", arrival_time=0, total_work=USEC_PER_SEC, weight=1),
            TaskSpec(id="heavy", arrival_time=0, total_work=USEC_PER_SEC, weight=2048),
        ),
        core_count=1,
    )
    done = completions(simulate(workload, builtin("layered_weight")))
    assert done["heavy"] < done["light"]


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_keep_the_invariants(name):
    result = simulate(smoke_latency_chain(), builtin(name))
    assert result.ok(), result.violations
    assert not result.incomplete


def test_unsafe_divisor_needs_dry_run(two_tasks):
    risky = parse_policy("name = risky\npriority = 1 / exec_runtime\n")
    with pytest.raises(InvalidSpec):
        simulate(two_tasks, risky)
    with pytest.raises(RuntimeEvalError):
        simulate(two_tasks, risky, dry_run=True)


def test_cache_memoizes_by_workload_policy_and_seed(two_tasks):
    calls = []

    def counting(workload, policy, seed=0):
        calls.append(seed)
        return simulate(workload, policy, seed=seed)

    cache = SimulationCache(simulate_fn=counting)
    first = cache.run(two_tasks, builtin("fifo"))
    again = cache.run(two_tasks, builtin("fifo"))
    cache.run(two_tasks, builtin("fifo"), seed=1)

    assert first is again
    assert calls == [0, 1]
    assert (cache.hits, cache.misses) == (1, 2)


def test_trace_export(tmp_path, two_tasks):
    result = simulate(two_tasks, builtin("fifo"))
    frame = trace_frame(result)
    assert list(frame.columns) == TRACE_COLUMNS
    assert frame.loc[frame.task_id == "b", "latency"].item() == 5 * USEC_PER_SEC

    path = tmp_path / "trace.csv"
    text = trace_to_csv(result, path)
    assert path.read_text(encoding="utf-8") == text
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)


@st.composite
def random_workloads(draw):
    """Up to 8 tasks with dependency and wake edges pointing back at earlier tasks."""
    n = draw(st.integers(1, 8))
    tasks = []
    wake_targets = {i: [] for i in range(n)}
    for i in range(n):
        earlier = st.sets(st.integers(0, i - 1), max_size=min(i, 3)) if i else st.just(set())
        deps = draw(earlier)
        wakers = draw(earlier) - deps
        for w in wakers:
            wake_targets[w].append(f"t{i}")
        work = draw(st.integers(1, 5_000))
        tasks.append(dict(
            id=f"t{i}",
            arrival_time=draw(st.integers(0, 5_000)),
            total_work=work,
            expected_runtime_hint=work,
            weight=draw(st.integers(1, 4096)),
            deps=tuple(f"t{d}" for d in deps),
        ))
    return WorkloadSpec(
        name="random",
        tasks=tuple(TaskSpec(**t, wake_targets=tuple(wake_targets[i])) for i, t in enumerate(tasks)),
        core_count=draw(st.integers(1, 3)),
    )


@settings(max_examples=200)
@given(
    random_workloads(),
    st.sampled_from(BUILTIN_NAMES),
    st.integers(0, 2 ** 32),
    st.sampled_from([0.0, 0.3]),
)
def test_simulator_invariants(workload, name, seed, hint_noise):
    policy = builtin(name)
    result = simulate(workload, policy, seed=seed, hint_noise=hint_noise)

    assert result.ok(), result.violations
    assert not result.incomplete
    # every task shows up once and finishes with all of its work done
    assert sorted(t.task_id for t in result.trace) == sorted(t.id for t in workload.tasks)
    assert all(t.completion is not None for t in result.trace)
    assert sum(t.exec_runtime for t in result.trace) == sum(t.total_work for t in workload.tasks)

    done = completions(result)
    traces = {t.task_id: t for t in result.trace}
    for task in workload.tasks:
        blockers = set(task.deps) | {w.id for w in workload.tasks if task.id in w.wake_targets}
        for blocker in blockers:
            assert traces[task.id].release >= done[blocker]
        assert traces[task.id].first_run >= traces[task.id].release

    assert simulate(workload, policy, seed=seed, hint_noise=hint_noise) == result
