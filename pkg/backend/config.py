"""
Server configuration.

A JSON file validated into ServerConfig. ``.env`` is loaded first; the
environment variables SCHEDCP_REPO_PATH, SCHEDCP_LOG_FILE and
SCHEDCP_COST_CAP override file values.
"""

import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from scheduler.errors import ConfigError
from services.canary import CanaryConfig
from services.verifier import VerifierConfig

logger = logging.getLogger(__name__)

ENV_OVERRIDES = {
    "SCHEDCP_REPO_PATH": "repo_path",
    "SCHEDCP_LOG_FILE": "log_file",
    "SCHEDCP_COST_CAP": "cost_cap",
}


class ServerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    listen: Literal["stdio", "tcp"] = "stdio"
    host: str = "127.0.0.1"
    port: int = Field(default=8765, ge=1, le=65535)
    # browser origins allowed on the HTTP transport; none by default
    cors_origins: List[str] = Field(default_factory=list)
    repo_path: str = "./policy_repo"
    signing_key_env: str = "SCHEDCP_SIGNING_KEY"
    token_ttl_s: int = Field(default=24 * 60 * 60, gt=0)
    cost_cap: int = Field(default=1000, gt=0)
    context_budget: int = Field(default=2048, ge=128)
    baseline: str = "fair_vruntime"
    log_file: Optional[str] = None
    log_level: str = "INFO"
    verifier: VerifierConfig = Field(default_factory=VerifierConfig)
    canary: CanaryConfig = Field(default_factory=CanaryConfig)


def load_config(path: Optional[Union[str, Path]] = None, env_file: Optional[str] = None) -> ServerConfig:
    """Read ``path`` (defaults only when None) and apply environment overrides."""
    load_dotenv(env_file)
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", {"path": str(path)}) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}", {"path": str(path)}) from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object", {"path": str(path)})

    for env_name, field in ENV_OVERRIDES.items():
        value = os.getenv(env_name)
        if value:
            data[field] = value

    try:
        config = ServerConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}", {"errors": exc.errors(include_url=False)}) from None
    logger.debug("loaded config: listen=%s repo=%s", config.listen, config.repo_path)
    return config
