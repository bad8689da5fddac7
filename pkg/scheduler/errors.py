"""
Error hierarchy shared by every layer of the control plane.

Each error carries a stable ``kind`` (the name used on the wire and in logs)
and an optional ``details`` dict that the server copies into error envelopes.
"""

from typing import Any, Dict, Optional


class SchedCPError(Exception):
    """Base class for all domain errors."""

    kind = "SchedCPError"
    rpc_code = -32000

    def __init__(self, message: str = "", details: Optional[Dict[str, Any]] = None):
        super().__init__(message or self.kind)
        self.message = message or self.kind
        self.details = details or {}

    def to_envelope(self) -> Dict[str, Any]:
        return {
            "code": self.rpc_code,
            "message": self.message,
            "data": {"kind": self.kind, "details": self.details},
        }


# domain-core
class EmptyTrace(SchedCPError):
    kind = "EmptyTrace"


class DegenerateBaseline(SchedCPError):
    kind = "DegenerateBaseline"


class InvalidWorkload(SchedCPError):
    kind = "InvalidWorkload"


# policy-dsl
class PolicySyntaxError(SchedCPError):
    kind = "SyntaxError"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})",
                         {"line": line, "column": column})
        self.line = line
        self.column = column


class UnknownIdentifier(SchedCPError):
    kind = "UnknownIdentifier"

    def __init__(self, name: str):
        super().__init__(f"unknown identifier '{name}'", {"name": name})
        self.name = name


class DuplicateParam(SchedCPError):
    kind = "DuplicateParam"


class EvalDivisionByZero(SchedCPError):
    kind = "DivisionByZero"


class UnknownBuiltin(SchedCPError):
    kind = "UnknownBuiltin"


class EmptyComposition(SchedCPError):
    kind = "EmptyComposition"


class InvalidEdit(SchedCPError):
    kind = "InvalidEdit"


# sim-engine
class RuntimeEvalError(SchedCPError):
    kind = "RuntimeEvalError"


class InvalidDistribution(SchedCPError):
    kind = "InvalidDistribution"


# analysis-engine
class UnboundSession(SchedCPError):
    kind = "UnboundSession"


class BudgetTooSmall(SchedCPError):
    kind = "BudgetTooSmall"


class UnsupportedProbe(SchedCPError):
    kind = "UnsupportedProbe"


class UnknownDeployment(SchedCPError):
    kind = "UnknownDeployment"


class WindowIncomplete(SchedCPError):
    kind = "WindowIncomplete"


# policy-repo
class EmptyQuery(SchedCPError):
    kind = "EmptyQuery"


class InvalidSearchLimit(SchedCPError):
    kind = "InvalidSearchLimit"


class InvalidSpec(SchedCPError):
    kind = "InvalidSpec"


class UnknownPolicy(SchedCPError):
    kind = "UnknownPolicy"


class DuplicateDeployment(SchedCPError):
    kind = "DuplicateDeployment"


class PromotionBlocked(SchedCPError):
    kind = "PromotionBlocked"


class IllegalTransition(SchedCPError):
    kind = "IllegalTransition"


# verifier
class VerdictNotPass(SchedCPError):
    kind = "VerdictNotPass"


class InvalidToken(SchedCPError):
    kind = "InvalidToken"


class TokenExpired(InvalidToken):
    kind = "Expired"


class TokenSuiteMismatch(SchedCPError):
    kind = "TokenSuiteMismatch"


# control-plane-server
class UnknownTool(SchedCPError):
    kind = "UnknownTool"
    rpc_code = -32601


class SchemaViolation(SchedCPError):
    kind = "SchemaViolation"
    rpc_code = -32602


class BudgetExhausted(SchedCPError):
    kind = "BudgetExhausted"


class UnknownSession(SchedCPError):
    kind = "UnknownSession"


class ConfigError(SchedCPError):
    kind = "ConfigError"


# agent-loop / cli
class ExhaustedRefinements(SchedCPError):
    kind = "ExhaustedRefinements"


class PlanInvalidated(SchedCPError):
    kind = "PlanInvalidated"


class UnknownSuite(SchedCPError):
    kind = "UnknownSuite"
