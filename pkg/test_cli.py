import json

import pytest

from schedctl import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, main
from scheduler.sim.workloads import straggler_longtail


@pytest.fixture
def workload_file(tmp_path):
    path = tmp_path / "longtail.json"
    path.write_text(straggler_longtail().canonical(), encoding="utf-8")
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"repo_path": str(tmp_path / "repo")}), encoding="utf-8")
    return path


def test_gen_prints_a_workload(capsys):
    assert main(["gen", "longtail"]) == EXIT_OK
    workload = json.loads(capsys.readouterr().out)
    assert len(workload["tasks"]) == 40


def test_sim(capsys, workload_file, tmp_path):
    csv_path = tmp_path / "trace.csv"
    assert main(["sim", str(workload_file), "ljf", "--csv", str(csv_path)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["policy"] == "ljf"
    assert out["metrics"]["makespan"] == 30_000_000
    assert out["violations"] == []
    assert len(csv_path.read_text(encoding="utf-8").splitlines()) == 41


def test_sim_with_a_policy_file(capsys, workload_file, tmp_path):
    policy = tmp_path / "oldest.sched"
    policy.write_text("name = oldest\npriority = -arrival_time\n", encoding="utf-8")
    assert main(["sim", str(workload_file), str(policy)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["policy"] == "oldest"


def test_sim_errors(workload_file, tmp_path):
    assert main(["sim", str(workload_file), "no_such_policy"]) == EXIT_DOMAIN
    assert main(["sim", str(tmp_path / "missing.json"), "fifo"]) == EXIT_USAGE


def test_bench_reports_goal_improvement(capsys):
    argv = ["bench", "longtail", "--policies", "fifo,ljf", "--seeds", "3", "--hint-noise", "0.2", "--format", "json"]
    assert main(argv) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["baseline"] == "fair_vruntime"
    rows = [r for r in report["rows"] if r["workload"] == straggler_longtail().name]
    means = {r["policy"]: r for r in rows if r["seed"] == "mean"}
    assert means["fair_vruntime"]["goal_improvement_pct"] == 0
    assert means["ljf"]["goal_improvement_pct"] > 10

    # longest-first beats the long-last FIFO order by at least 10% on every seed
    for seed in range(3):
        by_policy = {r["policy"]: r for r in rows if r["seed"] == seed}
        fifo, ljf = by_policy["fifo"]["avg_completion"], by_policy["ljf"]["avg_completion"]
        assert (fifo - ljf) / fifo >= 0.10


def test_bench_table(capsys):
    assert main(["bench", "smoke", "--seeds", "1"]) == EXIT_OK
    assert "goal_improvement_pct" in capsys.readouterr().out


def test_repo_commands(capsys, config_file, tmp_path):
    assert main(["repo", "list", "--config", str(config_file)]) == EXIT_OK
    listed = json.loads(capsys.readouterr().out)
    ljf = next(r for r in listed if r["name"] == "ljf")

    assert main(["repo", "show", ljf["id"], "--config", str(config_file)]) == EXIT_OK
    assert "priority = expected_runtime" in json.loads(capsys.readouterr().out)["source"]

    assert main(["repo", "show", "0000000000000000", "--config", str(config_file)]) == EXIT_DOMAIN

    bundle = tmp_path / "bundle.json"
    assert main(["repo", "export", "--out", str(bundle), "--config", str(config_file)]) == EXIT_OK
    assert json.loads(bundle.read_text(encoding="utf-8"))["version"] == 1


def test_bad_config_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]", encoding="utf-8")
    assert main(["repo", "list", "--config", str(bad)]) == EXIT_USAGE


def test_argument_errors():
    assert main([]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_bench_edges(capsys):
    assert main(["bench", "no_such_suite"]) == EXIT_DOMAIN
    assert main(["bench", "longtail", "--seeds", "1", "--format", "json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert {r["policy"] for r in rows} == {"fair_vruntime"}


def test_sim_is_reproducible(capsys, workload_file):
    assert main(["sim", str(workload_file), "fair_vruntime", "--seed", "4"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["sim", str(workload_file), "fair_vruntime", "--seed", "4"]) == EXIT_OK
    assert capsys.readouterr().out == first


def test_loop_without_iterations(capsys, workload_file, config_file, tmp_path):
    assert main(["loop", str(workload_file), "--max-iters", "0", "--config", str(config_file)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == []
    assert main(["loop", str(tmp_path / "missing.json"), "--config", str(config_file)]) == EXIT_USAGE


def test_bench_row_for_a_run_that_completes_nothing(monkeypatch):
    import schedctl
    from scheduler.sim.engine import simulate

    def stalled(workload, policy, seed=0, hint_noise=0.0):
        result = simulate(workload, policy, seed=seed, hint_noise=hint_noise)
        return result.model_copy(update={"metrics": None}) if policy.name == "fifo" else result

    monkeypatch.setattr(schedctl, "simulate", stalled)
    rows = schedctl.bench_rows("smoke", ["fifo"], seeds=1)

    fifo = [r for r in rows if r["policy"] == "fifo"]
    assert fifo and all(r["incomplete"] is True and r["makespan"] is None for r in fifo)
    assert all(r["goal_improvement_pct"] is None for r in fifo if r["seed"] == "mean")
    baseline = [r for r in rows if r["policy"] == "fair_vruntime" and r["seed"] == "mean"]
    assert all(r["goal_improvement_pct"] == 0 for r in baseline)
