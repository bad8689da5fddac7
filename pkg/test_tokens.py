import json

import pytest

from scheduler.errors import InvalidToken, TokenExpired, TokenSuiteMismatch, VerdictNotPass
from services.tokens import DeploymentToken, TokenSigner, load_signing_key, verify_token
from services.verifier import ValidationReport

KEY = b"unit-key"


def report(verdict="pass", suite="suite-a") -> ValidationReport:
    return ValidationReport(
        policy_id="abc123",
        policy_name="ljf",
        stages=(),
        verdict=verdict,
        suite_hash=suite,
        baseline_id="base",
        goal="min_makespan",
        family="batch-longtail",
    )


class Clock:
    def __init__(self, now=1_000.0):
        self.now = now

    def __call__(self):
        return self.now


def test_issue_and_verify():
    clock = Clock()
    signer = TokenSigner(KEY, ttl_s=60, clock=clock)
    token = signer.issue(report())

    assert token.issued_at == 1_000 and token.ttl == 60
    assert signer.verify(token.to_wire(), suite_hash="suite-a") == token
    assert verify_token(json.loads(token.to_wire()), KEY, now=1_001) == token


def test_failing_report_gets_no_token():
    with pytest.raises(VerdictNotPass):
        TokenSigner(KEY).issue(report(verdict="fail"))


def test_tampering_is_detected():
    token = TokenSigner(KEY, clock=Clock()).issue(report())
    forged = token.model_copy(update={"policy_id": "other"})
    with pytest.raises(InvalidToken):
        verify_token(forged, KEY, now=1_001)
    with pytest.raises(InvalidToken):
        verify_token(token, b"another-key", now=1_001)
    with pytest.raises(InvalidToken):
        DeploymentToken.from_wire("{not json")


def test_expiry_and_suite_binding():
    clock = Clock()
    signer = TokenSigner(KEY, ttl_s=60, clock=clock)
    token = signer.issue(report())
    with pytest.raises(TokenSuiteMismatch):
        signer.verify(token, suite_hash="suite-b")
    clock.now += 60
    with pytest.raises(TokenExpired):
        signer.verify(token)
    # expiry is a kind of invalid token
    with pytest.raises(InvalidToken):
        signer.verify(token)


def test_signing_key(monkeypatch):
    with pytest.raises(ValueError):
        TokenSigner(b"")
    monkeypatch.setenv("SCHEDCP_SIGNING_KEY", "from-env")
    assert load_signing_key() == b"from-env"
    monkeypatch.delenv("SCHEDCP_SIGNING_KEY")
    assert len(load_signing_key()) == 32
