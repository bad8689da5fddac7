"""
Scheduler Optimization Agent - Complete Workflow Demo

This script walks the full StateGraph loop on the batch long-tail workload:
1. Observe: summarize and classify the workload (deep probes if unsure)
2. Plan: search the policy repository, pick configure / patch / compose
3. Execute: materialize, verify (with automatic refinement), canary deploy
4. Learn: record the outcome, promote or note an antipattern
5. Repeat until the live goal metric stops improving
"""
import argparse
import sys
import tempfile
from datetime import datetime

from agents.client import HttpClient, InProcessClient
from agents.core.agent import SchedAgent
from backend.config import ServerConfig
from backend.logging_config import configure_logging
from backend.server import ControlPlane
from scheduler.errors import SchedCPError
from scheduler.sim.workloads import gen_build_dag, gen_latency_chain, straggler_longtail

WORKLOADS = {
    "longtail": straggler_longtail,
    "build": lambda seed: gen_build_dag(100, 4, seed=seed),
    "latency": lambda seed: gen_latency_chain(8, seed=seed, n_hogs=2),
}


def demo_workflow(workload_name: str, max_iters: int, server_url: str = None):
    """Demo the complete workflow."""
    print("🚀 SCHEDULER OPTIMIZATION AGENT - STATEGRAPH WORKFLOW")
    print("=" * 60)
    print("Features:")
    print("✅ Budgeted workload summaries and on-demand deep profiling")
    print("✅ BM25 policy repository with outcome history")
    print("✅ Three-stage verification with signed deployment tokens")
    print("✅ Canary deployment with a circuit breaker")
    print("✅ observe -> plan -> execute -> learn as a LangGraph StateGraph")
    print()

    if server_url:
        client = HttpClient(server_url)
        print(f"🌐 Using control plane at {server_url}")
    else:
        repo_dir = tempfile.mkdtemp(prefix="schedcp_demo_")
        client = InProcessClient(ControlPlane(ServerConfig(repo_path=repo_dir)))
        print(f"📁 Fresh policy repository in {repo_dir}")

    info = client.initialize()
    print(f"🔌 {info['serverInfo']['name']} {info['serverInfo']['version']}, {len(client.list_tools())} tools")

    workload = WORKLOADS[workload_name](0)
    session_id = client.open_session(workload.model_dump(mode="json"))
    print(f"\n🔄 WORKFLOW DEMONSTRATION")
    print(f"Workload: {workload.name} ({len(workload.tasks)} tasks on {workload.core_count} cores)")
    print(f"Session: {session_id} started {datetime.now().strftime('%H:%M:%S')}")
    print("-" * 40)

    agent = SchedAgent(client)
    try:
        records = agent.run_loop(session_id, max_iters=max_iters)
    except SchedCPError as e:
        print(f"❌ Loop error: {e.kind}: {e.message}")
        return

    for record in records:
        print(f"\n🤖 ITERATION {record.index + 1}: {record.plan.kind}")
        print(f"   family {record.profile.family}, goal {record.profile.optimization_goal}")
        print(f"   plan: {record.plan.rationale}")
        if record.attempts:
            print(f"   refinements: {' -> '.join(','.join(codes) or 'pass' for codes in record.attempts)}")
        if record.deployment_id:
            print(f"   canary {record.deployment_id[:8]}: {record.phase} ({record.policy_name})")
            print(f"   goal metric {record.baseline_metric:.0f} (baseline) -> {record.candidate_metric:.0f}")
        else:
            print("   ❌ no deployable policy this iteration")
        print(f"   live metric {record.live_metric}, gain {record.improvement_pct:+.2f}%")
        print(f"   actions: {', '.join(record.actions)}" + (f", hint {record.hint}" if record.hint else ""))

    status = client.call("session.status", session_id)
    print(f"\n🎉 WORKFLOW DEMONSTRATION COMPLETED!")
    print(f"Cost spent: {status['cost_used']} of {status['cost_cap']}")
    print(f"Active policy: {status['active_policy']}")
    client.close_session(session_id)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the scheduler agent loop end to end")
    parser.add_argument("--workload", choices=sorted(WORKLOADS), default="longtail")
    parser.add_argument("--max-iters", type=int, default=3)
    parser.add_argument("--server", help="base URL of a running server (default: in-process)")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args()

    configure_logging(args.log_level)
    demo_workflow(args.workload, args.max_iters, args.server)
    sys.exit(0)
