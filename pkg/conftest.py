"""
Shared fixtures: a throwaway policy repository, a control plane with a fixed
signing key, and the small workloads most tests run on.
"""

import os

import pytest
from hypothesis import HealthCheck, settings

from agents.client import InProcessClient
from backend.config import ServerConfig
from backend.server import ControlPlane
from scheduler.models import USEC_PER_SEC, TaskSpec, WorkloadSpec
from scheduler.sim.workloads import straggler_longtail
from services.policy_repository import PolicyRepository
from services.tokens import TokenSigner

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

SIGNING_KEY = b"test-signing-key"


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for name in ("SCHEDCP_REPO_PATH", "SCHEDCP_LOG_FILE", "SCHEDCP_COST_CAP"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("SCHEDCP_SIGNING_KEY", SIGNING_KEY.decode())


@pytest.fixture
def repository(tmp_path):
    return PolicyRepository(tmp_path / "repo")


@pytest.fixture
def signer():
    return TokenSigner(SIGNING_KEY, ttl_s=3600)


@pytest.fixture
def config(tmp_path):
    return ServerConfig(repo_path=str(tmp_path / "repo"))


@pytest.fixture
def plane(config, signer):
    return ControlPlane(config, signer=signer)


@pytest.fixture
def client(plane):
    return InProcessClient(plane)


@pytest.fixture
def longtail():
    return straggler_longtail()


@pytest.fixture
def two_tasks():
    """2 s then 3 s of work on one core, both arriving at zero."""
    return WorkloadSpec(
        name="two-tasks",
        tasks=(
            TaskSpec(id="a", arrival_time=0, total_work=2 * USEC_PER_SEC, expected_runtime_hint=2 * USEC_PER_SEC),
            TaskSpec(id="b", arrival_time=0, total_work=3 * USEC_PER_SEC, expected_runtime_hint=3 * USEC_PER_SEC),
        ),
        core_count=1,
    )


@pytest.fixture
def longtail_session(client, longtail):
    return client.open_session(longtail.model_dump(mode="json"))
