#!/usr/bin/env python3
"""
schedctl - operator entry point of the scheduler control plane.

    schedctl.py serve [--config FILE]
    schedctl.py sim WORKLOAD POLICY [--seed N] [--hint-noise S] [--csv OUT]
    schedctl.py bench SUITE [--policies a,b] [--seeds 3] [--format table|json|csv]
    schedctl.py loop WORKLOAD [--max-iters N] [--config FILE]
    schedctl.py repo {list|show ID|export [--out FILE]|import FILE} [--config FILE]
    schedctl.py gen {longtail|build|latency} [--seed N]

stdout carries only the command's JSON/CSV/table output; logs go to stderr.
Exit codes: 0 success, 2 usage or configuration, 3 domain error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from backend.config import ServerConfig, load_config
from backend.logging_config import configure_logging
from scheduler.canonical import canonical_json
from scheduler.dsl.library import builtin
from scheduler.dsl.parser import parse_policy
from scheduler.dsl.policy import PolicySpec
from scheduler.errors import ConfigError, InvalidWorkload, SchedCPError
from scheduler.metrics import compute_delta, goal_improvement_pct, mean_report
from scheduler.models import FAMILY_GOALS, WorkloadSpec
from scheduler.sim.engine import simulate
from scheduler.sim.export import METRIC_COLUMNS, metrics_frame, metrics_row, result_to_json, trace_to_csv
from scheduler.sim.workloads import gen_build_dag, gen_latency_chain, load_workload, straggler_longtail, suite

logger = logging.getLogger("schedctl")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DOMAIN = 3

BASELINE = "fair_vruntime"

GENERATORS: Dict[str, Callable[[int], WorkloadSpec]] = {
    "longtail": straggler_longtail,
    "build": lambda seed: gen_build_dag(100, 4, seed=seed),
    "latency": lambda seed: gen_latency_chain(8, seed=seed, n_hogs=2),
}


class UsageError(Exception):
    """Bad input files or arguments; exit 2."""


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    sys.stdout.flush()


def _read_workload(path: str) -> WorkloadSpec:
    try:
        return load_workload(path)
    except FileNotFoundError:
        raise UsageError(f"workload file {path} not found") from None
    except InvalidWorkload as exc:
        raise UsageError(f"workload file {path}: {exc.message}") from None


def resolve_policy(ref: str) -> PolicySpec:
    """A built-in name, or a path to a policy source file."""
    path = Path(ref)
    if path.suffix or path.exists():
        try:
            return parse_policy(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"policy file {ref} not found") from None
    return builtin(ref)


def _config(args) -> ServerConfig:
    return load_config(getattr(args, "config", None))


# Commands -----------------------------------------------------------------


def cmd_serve(args) -> int:
    from backend.server import ControlPlane

    config = _config(args)
    configure_logging(config.log_level, config.log_file)
    Path(config.repo_path).mkdir(parents=True, exist_ok=True)
    plane = ControlPlane(config)
    if config.listen == "tcp":
        from backend.main import serve_tcp

        serve_tcp(config, plane)
    else:
        print(f"schedcp listening on stdio (repo {config.repo_path}, {len(plane.repository)} policies)", file=sys.stderr)
        plane.serve_stdio()
    return EXIT_OK


def cmd_sim(args) -> int:
    workload = _read_workload(args.workload)
    policy = resolve_policy(args.policy)
    seed = workload.seed if args.seed is None else args.seed
    result = simulate(workload, policy, seed=seed, hint_noise=args.hint_noise)
    if args.csv:
        trace_to_csv(result, args.csv)
        logger.info("wrote trace of %d tasks to %s", len(result.trace), args.csv)
    if args.full:
        _emit(result_to_json(result))
    else:
        _emit(canonical_json({
            "workload": result.workload,
            "policy": result.policy,
            "policy_id": result.policy_id,
            "seed": result.seed,
            "metrics": result.metrics,
            "violations": list(result.violations),
        }))
    return EXIT_OK


def bench_rows(suite_name: str, policies: Sequence[str], seeds: int = 3, hint_noise: float = 0.0) -> List[Dict[str, object]]:
    """
    Per-seed metric rows for the baseline and each policy on every workload of
    the suite, followed by one mean row per (workload, policy) with the goal
    improvement over the baseline.
    """
    names = [BASELINE] + [p for p in policies if p != BASELINE]
    specs = {name: resolve_policy(name) for name in names}
    per_seed: List[Dict[str, object]] = []
    reports: Dict[tuple, list] = {}
    order: List[tuple] = []
    for seed in range(seeds):
        for index, workload in enumerate(suite(suite_name, seed)):
            for name in names:
                result = simulate(workload, specs[name], seed=seed, hint_noise=hint_noise)
                key = (index, workload.name, workload.family, name)
                if key not in reports:
                    order.append(key)
                    reports[key] = []
                if result.metrics is not None:
                    reports[key].append(result.metrics)
                per_seed.append({"workload": workload.name, "policy": name, "seed": seed, **metrics_row(result.metrics)})

    means: List[Dict[str, object]] = []
    for key in order:
        index, workload_name, family, name = key
        goal = FAMILY_GOALS.get(family, "max_throughput")
        runs, baseline_runs = reports[key], reports[(index, workload_name, family, BASELINE)]
        if not runs or not baseline_runs:
            # no seed completed a task; nothing to average or compare
            means.append({"workload": workload_name, "policy": name, "seed": "mean", **metrics_row(None),
                          "goal": goal, "goal_improvement_pct": None, "avg_completion_pct": None,
                          "makespan_pct": None, "p99_pct": None, "throughput_pct": None})
            continue
        mean = mean_report(runs)
        baseline = mean_report(baseline_runs)
        delta = compute_delta(mean, baseline)
        means.append({
            "workload": workload_name,
            "policy": name,
            "seed": "mean",
            **metrics_row(mean),
            "goal": goal,
            "goal_improvement_pct": round(goal_improvement_pct(goal, delta), 3),
            "avg_completion_pct": round(delta.avg_completion_pct, 3),
            "makespan_pct": round(delta.makespan_pct, 3),
            "p99_pct": round(delta.p99_pct, 3),
            "throughput_pct": round(delta.throughput_pct, 3),
        })
    return per_seed + means


def cmd_bench(args) -> int:
    policies = [p.strip() for p in (args.policies or "").split(",") if p.strip()]
    rows = bench_rows(args.suite, policies, seeds=args.seeds, hint_noise=args.hint_noise)
    frame = metrics_frame(rows)
    if args.format == "json":
        _emit(json.dumps({"suite": args.suite, "baseline": BASELINE, "seeds": args.seeds, "rows": rows},
                         sort_keys=True, default=str))
    elif args.format == "csv":
        _emit(frame.to_csv(index=False))
    else:
        table = frame[frame["seed"] == "mean"]
        columns = ["workload", "policy"] + [c for c in METRIC_COLUMNS if c in ("makespan", "avg_completion", "latency_p99", "throughput")]
        columns += ["goal", "goal_improvement_pct"]
        _emit(table[columns].to_string(index=False))
    return EXIT_OK


def cmd_loop(args) -> int:
    from agents.client import InProcessClient
    from agents.core.agent import SchedAgent
    from backend.server import ControlPlane

    workload = _read_workload(args.workload)
    config = _config(args)
    configure_logging(config.log_level, config.log_file)
    plane = ControlPlane(config)
    client = InProcessClient(plane)
    session_id = client.open_session(workload.model_dump(mode="json"))
    records = SchedAgent(client).run_loop(session_id, max_iters=args.max_iters)
    client.close_session(session_id)
    _emit(json.dumps([r.model_dump(mode="json") for r in records], sort_keys=True, indent=2))
    return EXIT_OK


def cmd_repo(args) -> int:
    from backend.server import _view
    from services.policy_repository import PolicyRepository

    config = _config(args)
    repository = PolicyRepository(config.repo_path)
    if args.action == "list":
        _emit(json.dumps([_view(r).model_dump(exclude={"source"}) for r in repository.list_records()], indent=2))
    elif args.action == "show":
        if not args.target:
            raise UsageError("repo show needs a policy id")
        _emit(json.dumps(_view(repository.get(args.target)).model_dump(), indent=2))
    elif args.action == "export":
        text = canonical_json(repository.export_bundle())
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            _emit(text)
    else:
        if not args.target:
            raise UsageError("repo import needs a bundle file")
        try:
            bundle = json.loads(Path(args.target).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"bundle file {args.target} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"bundle file {args.target} is not valid JSON: {exc}") from None
        _emit(json.dumps({"imported": repository.import_bundle(bundle)}, indent=2))
    return EXIT_OK


def cmd_gen(args) -> int:
    _emit(canonical_json(GENERATORS[args.kind](args.seed)))
    return EXIT_OK


# Parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schedctl", description="Scheduler control plane")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the JSON-RPC server")
    serve.add_argument("--config", help="JSON config file")
    serve.set_defaults(func=cmd_serve)

    sim = commands.add_parser("sim", help="simulate one policy on one workload")
    sim.add_argument("workload", help="workload JSON file")
    sim.add_argument("policy", help="built-in policy name or policy source file")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--hint-noise", type=float, default=0.0)
    sim.add_argument("--csv", help="write the per-task trace as CSV")
    sim.add_argument("--full", action="store_true", help="print the whole result, trace included")
    sim.set_defaults(func=cmd_sim)

    bench = commands.add_parser("bench", help=f"compare policies against {BASELINE} on a workload suite")
    bench.add_argument("suite")
    bench.add_argument("--policies", default="", help="comma-separated built-in names or policy files")
    bench.add_argument("--seeds", type=int, default=3)
    bench.add_argument("--hint-noise", type=float, default=0.0)
    bench.add_argument("--format", choices=("table", "json", "csv"), default="table")
    bench.set_defaults(func=cmd_bench)

    loop = commands.add_parser("loop", help="run the agent loop headlessly")
    loop.add_argument("workload", help="workload JSON file")
    loop.add_argument("--max-iters", type=int, default=3)
    loop.add_argument("--config", help="JSON config file")
    loop.set_defaults(func=cmd_loop)

    repo = commands.add_parser("repo", help="inspect the policy repository")
    repo.add_argument("action", choices=("list", "show", "export", "import"))
    repo.add_argument("target", nargs="?", help="policy id (show) or bundle file (import)")
    repo.add_argument("--out", help="export destination")
    repo.add_argument("--config", help="JSON config file")
    repo.set_defaults(func=cmd_repo)

    gen = commands.add_parser("gen", help="print a generated workload as JSON")
    gen.add_argument("kind", choices=sorted(GENERATORS))
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not logging.getLogger().handlers:
        configure_logging("DEBUG" if args.verbose else "WARNING")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"schedctl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchedCPError as exc:
        print(f"schedctl: {exc.kind}: {exc.message}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
