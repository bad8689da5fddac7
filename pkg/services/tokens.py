"""
Signed deployment tokens.

A token binds a policy id to the hash of the suite it was validated on. The
mac is HMAC-SHA256 over the canonical JSON of the bound fields, carried as
base64 in the token's canonical JSON wire form.
"""

import base64
import binascii
import hashlib
import hmac
import json
import logging
import os
import secrets
import time
from typing import Callable, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from scheduler.canonical import canonical_json
from scheduler.errors import InvalidToken, TokenExpired, TokenSuiteMismatch, VerdictNotPass

logger = logging.getLogger(__name__)

DEFAULT_TTL_S = 24 * 60 * 60


class DeploymentToken(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    policy_id: str = Field(min_length=1)
    suite_hash: str = Field(min_length=1)
    issued_at: int
    ttl: int = Field(gt=0)
    mac: str

    def payload(self) -> str:
        return canonical_json({
            "policy_id": self.policy_id,
            "suite_hash": self.suite_hash,
            "issued_at": self.issued_at,
            "ttl": self.ttl,
        })

    def to_wire(self) -> str:
        return canonical_json(self)

    @classmethod
    def from_wire(cls, raw: Union[str, Dict[str, object], "DeploymentToken"]) -> "DeploymentToken":
        if isinstance(raw, DeploymentToken):
            return raw
        try:
            data = json.loads(raw) if isinstance(raw, str) else raw
            return cls.model_validate(data)
        except (ValueError, TypeError, ValidationError) as exc:
            raise InvalidToken(f"malformed token: {exc}") from None


def _mac(key: bytes, payload: str) -> str:
    digest = hmac.new(key, payload.encode("utf-8"), hashlib.sha256).digest()
    return base64.b64encode(digest).decode("ascii")


def verify_token(
    token: Union[str, Dict[str, object], DeploymentToken],
    key: bytes,
    now: Optional[float] = None,
    suite_hash: Optional[str] = None,
) -> DeploymentToken:
    """Return the token when it verifies; raise InvalidToken, TokenExpired or TokenSuiteMismatch."""
    token = DeploymentToken.from_wire(token)
    try:
        given = base64.b64decode(token.mac, validate=True)
    except (binascii.Error, ValueError):
        raise InvalidToken("token mac is not base64") from None
    expected = base64.b64decode(_mac(key, token.payload()))
    if not hmac.compare_digest(given, expected):
        raise InvalidToken("token mac does not verify", {"policy_id": token.policy_id})
    now = time.time() if now is None else now
    if now >= token.issued_at + token.ttl:
        raise TokenExpired(
            f"token for {token.policy_id} expired",
            {"issued_at": token.issued_at, "ttl": token.ttl, "now": int(now)},
        )
    if suite_hash is not None and token.suite_hash != suite_hash:
        raise TokenSuiteMismatch(
            "token was issued for a different validation suite",
            {"token_suite": token.suite_hash, "expected_suite": suite_hash},
        )
    return token


class TokenSigner:
    """Issues and verifies tokens with one server key."""

    def __init__(self, key: bytes, ttl_s: int = DEFAULT_TTL_S, clock: Callable[[], float] = time.time):
        if not key:
            raise ValueError("signing key must not be empty")
        self._key = key
        self.ttl_s = ttl_s
        self.clock = clock

    def issue(self, report) -> DeploymentToken:
        """Token for a passing ValidationReport."""
        if report.verdict != "pass":
            raise VerdictNotPass(
                f"validation of {report.policy_id} did not pass",
                {"policy_id": report.policy_id, "verdict": report.verdict},
            )
        fields = {
            "policy_id": report.policy_id,
            "suite_hash": report.suite_hash,
            "issued_at": int(self.clock()),
            "ttl": self.ttl_s,
        }
        unsigned = DeploymentToken(mac="", **fields)
        token = unsigned.model_copy(update={"mac": _mac(self._key, unsigned.payload())})
        logger.info("issued token for policy %s (suite %s)", report.policy_id, report.suite_hash)
        return token

    def verify(self, token, suite_hash: Optional[str] = None) -> DeploymentToken:
        return verify_token(token, self._key, now=self.clock(), suite_hash=suite_hash)


def load_signing_key(env_name: str = "SCHEDCP_SIGNING_KEY") -> bytes:
    """Key from the environment, or a random per-process key with a warning."""
    value = os.getenv(env_name)
    if value:
        return value.encode("utf-8")
    logger.warning("%s is not set; using a random per-process signing key (tokens will not survive restarts)", env_name)
    return secrets.token_bytes(32)
